//! Binary index file.
//!
//! ```text
//! "AMMRIDX" | u16 version | u8 kind (0 exact, 1 ivf)
//! u8 encoder (0 disentangled, 1 universal, 2 external) | u64 encoder seed
//! layout table
//! u32 rows | u32 dim | rows × (u32 len, utf-8 item id) | rows × dim f32
//! ivf only: u32 n_lists | n_lists × dim f32 centroids
//!           n_lists × (u32 length, length × u32 ordinals)
//! ```
//! All integers and floats are little-endian.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EncoderTag, ExactIndex, Index, IvfIndex};
use crate::binio::{self, corrupt, io_err};
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"AMMRIDX";
const VERSION: u16 = 1;

fn write_encoder<W: Write>(w: &mut W, tag: EncoderTag) -> Result<()> {
    let (code, seed) = match tag {
        EncoderTag::Disentangled => (0u8, 0u64),
        EncoderTag::Universal(seed) => (1, seed),
        EncoderTag::External => (2, 0),
    };
    w.write_u8(code).map_err(io_err)?;
    w.write_u64::<LittleEndian>(seed).map_err(io_err)
}

fn read_encoder<R: Read>(r: &mut R) -> Result<EncoderTag> {
    let code = r.read_u8().map_err(io_err)?;
    let seed = r.read_u64::<LittleEndian>().map_err(io_err)?;
    match code {
        0 => Ok(EncoderTag::Disentangled),
        1 => Ok(EncoderTag::Universal(seed)),
        2 => Ok(EncoderTag::External),
        other => Err(corrupt(format!("unknown encoder tag {other}"))),
    }
}

pub fn write_index<W: Write>(w: &mut W, index: &Index) -> Result<()> {
    let base = index.base();
    binio::write_header(w, MAGIC, VERSION)?;
    w.write_u8(match index {
        Index::Exact(_) => 0,
        Index::Ivf(_) => 1,
    })
    .map_err(io_err)?;
    write_encoder(w, base.encoder())?;
    binio::write_layout(w, base.layout())?;
    w.write_u32::<LittleEndian>(base.len() as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(base.dim() as u32).map_err(io_err)?;
    for id in base.item_ids() {
        binio::write_str(w, id)?;
    }
    binio::write_f32s(w, base.vectors())?;
    if let Index::Ivf(ivf) = index {
        w.write_u32::<LittleEndian>(ivf.n_lists() as u32)
            .map_err(io_err)?;
        binio::write_f32s(w, ivf.centroid_matrix())?;
        for list in ivf.lists() {
            w.write_u32::<LittleEndian>(list.len() as u32).map_err(io_err)?;
            for &o in list {
                w.write_u32::<LittleEndian>(o).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

pub fn read_index<R: Read>(r: &mut R) -> Result<Index> {
    binio::read_header(r, MAGIC, VERSION)?;
    let kind = r.read_u8().map_err(io_err)?;
    let encoder = read_encoder(r)?;
    let layout = binio::read_layout(r)?;
    let n = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    if dim != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), dim));
    }
    if n == 0 {
        return Err(corrupt("index has no rows"));
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(binio::read_str(r)?);
    }
    let vectors = binio::read_f32s(r, n * dim)?;
    let base = ExactIndex::from_parts(layout, encoder, ids, vectors);
    let index = match kind {
        0 => Index::Exact(base),
        1 => {
            let n_lists = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
            if n_lists == 0 || n_lists > n {
                return Err(corrupt(format!("n_lists {n_lists} outside 1..={n}")));
            }
            let centroids = binio::read_f32s(r, n_lists * dim)?;
            let mut lists = Vec::with_capacity(n_lists);
            for _ in 0..n_lists {
                let len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
                if len > n {
                    return Err(corrupt(format!("inverted list of length {len} > {n}")));
                }
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    list.push(r.read_u32::<LittleEndian>().map_err(io_err)?);
                }
                lists.push(list);
            }
            Index::Ivf(IvfIndex::from_parts(base, centroids, lists).map_err(|e| corrupt(e.to_string()))?)
        }
        other => return Err(corrupt(format!("unknown index kind {other}"))),
    };
    binio::expect_eof(r)?;
    Ok(index)
}

pub fn save_index(path: impl AsRef<Path>, index: &Index) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_index(&mut w, index)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_index(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::WeightedQuery;
    use crate::embedding::{EmbeddingVector, SliceLayout};
    use crate::index::{build_index, search, IndexKind};

    #[test]
    fn ivf_file_round_trip_preserves_search() {
        let layout = SliceLayout::universal(4);
        // Values exactly representable in f32 so persistence is lossless.
        let rows: Vec<_> = (0..64)
            .map(|i| EmbeddingVector {
                values: vec![(i % 7) as f64, (i % 3) as f64 - 1.0, 0.5, (i / 8) as f64],
                layout_id: 0,
            })
            .collect();
        let ids = (0..64).map(|i| format!("x{i:03}")).collect();
        let idx = build_index(&layout, EncoderTag::Universal(7), ids, &rows, IndexKind::Ivf, 4, 2).unwrap();
        let mut buf = Vec::new();
        write_index(&mut buf, &idx).unwrap();
        assert_eq!(&buf[..7], b"AMMRIDX");
        let back = read_index(&mut buf.as_slice()).unwrap();
        assert_eq!(back.base().encoder(), EncoderTag::Universal(7));
        let q = WeightedQuery::unweighted(rows[5].clone(), &layout);
        assert_eq!(
            search(&idx, &q, 10, 4).unwrap().ids(),
            search(&back, &q, 10, 4).unwrap().ids()
        );

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_index(&mut bad.as_slice()).is_err());
        assert!(read_index(&mut &buf[..buf.len() - 2]).is_err());
    }
}
