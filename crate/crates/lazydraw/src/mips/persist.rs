//! Index persistence: the "LDIX" container.
//!
//! Layout (all little-endian): magic "LDIX", u32 version (currently 1),
//! u32 kind (1 = IVF, 2 = LSH ladder), u64 n, u32 d, then the kind-specific
//! payload. Loading validates magic, version, kind, and the dataset's (n, d);
//! saving what was loaded reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::wire::{Reader, Writer};

use super::ivf::IvfIndex;
use super::lsh::{LshInstance, LshLadder, LshTable};

const MAGIC: [u8; 4] = *b"LDIX";
const VERSION: u32 = 1;

/// Either index flavor, for files and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum Index {
    Ivf(IvfIndex),
    Lsh(LshLadder),
}

impl Index {
    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Ivf(_) => IndexKind::Ivf,
            Index::Lsh(_) => IndexKind::Lsh,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Index::Ivf(i) => i.n,
            Index::Lsh(l) => l.n,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Index::Ivf(i) => i.d,
            Index::Lsh(l) => l.d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Ivf,
    Lsh,
}

impl IndexKind {
    fn tag(self) -> u32 {
        match self {
            IndexKind::Ivf => 1,
            IndexKind::Lsh => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Ivf => "ivf",
            IndexKind::Lsh => "lsh",
        }
    }
}

/// Writes the index to `path`, overwriting.
pub fn save_index(index: &Index, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file), path);
    w.bytes(&MAGIC)?;
    w.u32(VERSION)?;
    w.u32(index.kind().tag())?;
    w.u64(index.n() as u64)?;
    w.u32(index.dim() as u32)?;
    match index {
        Index::Ivf(ivf) => {
            w.u64(ivf.n_c as u64)?;
            w.u64(ivf.iters as u64)?;
            w.u64(ivf.seed)?;
            w.f32_slice(&ivf.centroids)?;
            w.u64_slice(&ivf.offsets)?;
            w.u32_slice(&ivf.ids)?;
        }
        Index::Lsh(lsh) => {
            w.f64(lsh.c)?;
            w.f64(lsh.delta)?;
            w.u64(lsh.k_max as u64)?;
            w.f64(lsh.m1)?;
            w.f64(lsh.m2)?;
            w.u32(lsh.bits)?;
            w.u64(lsh.max_tables as u64)?;
            w.u64(lsh.seed)?;
            w.u64(lsh.instances.len() as u64)?;
            for inst in &lsh.instances {
                w.f64(inst.s1_cos)?;
                w.f64(inst.s2_cos)?;
                w.f64(inst.rho)?;
                w.u64(inst.tables.len() as u64)?;
                for table in &inst.tables {
                    w.f32_slice(&table.projections)?;
                    w.u64(table.keys.len() as u64)?;
                    w.u64_slice(&table.keys)?;
                    w.u32_slice(&table.ids)?;
                }
            }
        }
    }
    w.finish()
}

struct Header {
    kind: u32,
    n: u64,
    d: u32,
}

fn read_header<R: std::io::Read>(r: &mut Reader<R>, path: &Path) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let kind = r.u32()?;
    if kind != 1 && kind != 2 {
        return Err(r.malformed(format!("unknown index kind {kind}")));
    }
    let n = r.u64()?;
    let d = r.u32()?;
    Ok(Header { kind, n, d })
}

/// Loads an index and checks it against the dataset it will serve.
pub fn load_index(path: &Path, dataset: &Dataset) -> Result<Index> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), path);
    let header = read_header(&mut r, path)?;
    if header.n != dataset.len() as u64 || header.d != dataset.dim() as u32 {
        return Err(Error::IndexMismatch {
            index_n: header.n,
            index_d: header.d,
            data_n: dataset.len() as u64,
            data_d: dataset.dim() as u32,
        });
    }
    let n = header.n as usize;
    let d = header.d as usize;
    match header.kind {
        1 => {
            let n_c = r.u64()? as usize;
            if n_c == 0 || n_c > n {
                return Err(r.malformed(format!("bad cluster count {n_c}")));
            }
            let iters = r.u64()? as usize;
            let seed = r.u64()?;
            let centroids = r.f32_vec(n_c * d)?;
            let offsets = r.u64_vec(n_c + 1)?;
            if offsets[0] != 0 || offsets[n_c] != n as u64 || offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err(r.malformed("inverted list offsets are not a partition"));
            }
            let ids = r.u32_vec(n)?;
            if ids.iter().any(|&id| id as usize >= n) {
                return Err(r.malformed("inverted list id out of range"));
            }
            Ok(Index::Ivf(IvfIndex {
                n,
                d,
                n_c,
                iters,
                seed,
                centroids,
                offsets,
                ids,
            }))
        }
        2 => {
            let c = r.f64()?;
            let delta = r.f64()?;
            let k_max = r.u64()? as usize;
            let m1 = r.f64()?;
            let m2 = r.f64()?;
            let bits = r.u32()?;
            let max_tables = r.u64()? as usize;
            let seed = r.u64()?;
            let n_inst = r.u64()? as usize;
            if bits > 64 || n_inst == 0 || n_inst > 1 << 24 {
                return Err(r.malformed("implausible ladder geometry"));
            }
            let mut instances = Vec::with_capacity(n_inst);
            for _ in 0..n_inst {
                let s1_cos = r.f64()?;
                let s2_cos = r.f64()?;
                let rho = r.f64()?;
                let n_tables = r.u64()? as usize;
                if n_tables == 0 || n_tables > 1 << 24 {
                    return Err(r.malformed("implausible table count"));
                }
                let mut tables = Vec::with_capacity(n_tables);
                for _ in 0..n_tables {
                    let projections = r.f32_vec(bits as usize * (d + 1))?;
                    let entries = r.u64()? as usize;
                    if entries != n {
                        return Err(r.malformed(format!(
                            "table holds {entries} entries for {n} rows"
                        )));
                    }
                    let keys = r.u64_vec(entries)?;
                    if keys.windows(2).any(|w| w[0] > w[1]) {
                        return Err(r.malformed("table keys are not sorted"));
                    }
                    let ids = r.u32_vec(entries)?;
                    if ids.iter().any(|&id| id as usize >= n) {
                        return Err(r.malformed("table id out of range"));
                    }
                    tables.push(LshTable {
                        projections,
                        keys,
                        ids,
                    });
                }
                instances.push(LshInstance {
                    s1_cos,
                    s2_cos,
                    rho,
                    tables,
                });
            }
            Ok(Index::Lsh(LshLadder {
                n,
                d,
                c,
                delta,
                k_max,
                m1,
                m2,
                bits,
                max_tables,
                seed,
                instances,
            }))
        }
        _ => unreachable!(),
    }
}

/// Header and parameter summary without loading the bulk arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexInfo {
    pub kind: IndexKind,
    pub n: u64,
    pub d: u32,
    pub summary: String,
}

pub fn index_info(path: &Path) -> Result<IndexInfo> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), path);
    let header = read_header(&mut r, path)?;
    let (kind, summary) = match header.kind {
        1 => {
            let n_c = r.u64()?;
            let iters = r.u64()?;
            let seed = r.u64()?;
            (
                IndexKind::Ivf,
                format!("ivf n_c={n_c} iters={iters} seed={seed}"),
            )
        }
        2 => {
            let c = r.f64()?;
            let delta = r.f64()?;
            let k_max = r.u64()?;
            let m1 = r.f64()?;
            let m2 = r.f64()?;
            let bits = r.u32()?;
            let max_tables = r.u64()?;
            let seed = r.u64()?;
            let n_inst = r.u64()?;
            (
                IndexKind::Lsh,
                format!(
                    "lsh c={c} delta={delta} k_max={k_max} m1={m1:.6} m2={m2:.6} \
                     bits={bits} max_tables={max_tables} instances={n_inst} seed={seed}"
                ),
            )
        }
        _ => unreachable!(),
    };
    Ok(IndexInfo {
        kind,
        n: header.n,
        d: header.d,
        summary,
    })
}
