//! On-disk formats: corpus manifests, dense video tensors, per-frame image
//! directories, slice feature matrices and graph files. All binary integers
//! and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Frames, SliceFeatureMatrix, Split, VideoSample};
use crate::encoders::{Edge, SequentialGraph, SpectralGraph, VideoGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VIDEO_MAGIC: &[u8; 4] = b"DVT1";
pub const SFM_MAGIC: &[u8; 4] = b"SFM1";
pub const SPG_MAGIC: &[u8; 4] = b"SPG1";
pub const SEG_MAGIC: &[u8; 4] = b"SEG1";

const DTYPE_F32: u32 = 1;
const DTYPE_U8: u32 = 2;

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, buf: &'a [u8]) -> Self {
        Self { path, buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn dim_u32(path: &Path, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("dimension {v} exceeds 32 bits")))
}

/// Dense video tensor: 24-byte header (magic, dtype, T, H, W, C) and
/// row-major samples. Missing frames are stored as NaN.
pub fn write_video_tensor(path: &Path, video: &VideoSample) -> Result<()> {
    let [t, h, w, c] = video.frames.shape();
    let mut out = Vec::with_capacity(24 + video.frames.data().len() * 4);
    out.extend_from_slice(VIDEO_MAGIC);
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for d in [t, h, w, c] {
        out.extend_from_slice(&dim_u32(path, d)?.to_le_bytes());
    }
    let frame = h * w * c;
    for (i, chunk) in video.frames.data().chunks(frame.max(1)).enumerate() {
        let valid = video.frame_valid.get(i).copied().unwrap_or(true);
        for &v in chunk {
            let v = if valid { v } else { f32::NAN };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

/// Reads a dense video tensor; returns the frames and the validity mask
/// (a frame is invalid when any of its samples is NaN).
pub fn read_video_tensor(path: &Path) -> Result<(Frames, Vec<bool>)> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(VIDEO_MAGIC)?;
    let dtype = r.u32()?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n: usize = dims.iter().product();
    let data: Vec<f32> = match dtype {
        DTYPE_F32 => r.f32s(n)?,
        DTYPE_U8 => r.take(n)?.iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(Error::format(path, format!("unknown dtype code {other}"))),
    };
    r.finish()?;
    let frame = dims[1] * dims[2] * dims[3];
    let mut valid = Vec::with_capacity(dims[0]);
    let mut clean = data;
    for chunk in clean.chunks_mut(frame.max(1)).take(dims[0]) {
        let ok = chunk.iter().all(|v| !v.is_nan());
        if !ok {
            chunk.fill(0.0);
        }
        valid.push(ok);
    }
    Ok((Frames::new(dims, clean)?, valid))
}

/// Reads frames named `<index>.png` (any zero padding) from `dir`. Indices
/// absent from the directory become invalid frames; the video spans
/// `0..=max index`.
pub fn read_frame_directory(dir: &Path) -> Result<(Frames, Vec<bool>)> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
        let idx: usize = digits
            .parse()
            .map_err(|_| Error::format(&path, "frame file name has no index"))?;
        files.insert(idx, path);
    }
    let Some((&last, _)) = files.last_key_value() else {
        return Err(Error::format(dir, "no .png frames"));
    };
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut data = Vec::new();
    let mut valid = Vec::with_capacity(last + 1);
    for t in 0..=last {
        match files.get(&t) {
            Some(path) => {
                let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
                let (w, h) = (img.width() as usize, img.height() as usize);
                let (c, pixels): (usize, Vec<u8>) = match img.color().channel_count() {
                    1 | 2 => (1, img.into_luma8().into_raw()),
                    _ => (3, img.into_rgb8().into_raw()),
                };
                match shape {
                    None => {
                        shape = Some((h, w, c));
                        data.resize(t * h * w * c, 0.0);
                    }
                    Some(s) if s != (h, w, c) => {
                        return Err(Error::format(path, format!("frame is {h}×{w}×{c}, expected {s:?}")));
                    }
                    _ => {}
                }
                data.extend(pixels.iter().map(|&b| b as f32 / 255.0));
                valid.push(true);
            }
            None => {
                if let Some((h, w, c)) = shape {
                    data.extend(std::iter::repeat_n(0.0, h * w * c));
                }
                valid.push(false);
            }
        }
    }
    let (h, w, c) = shape.expect("at least one frame read");
    Ok((Frames::new([last + 1, h, w, c], data)?, valid))
}

/// Writes every frame as an 8-bit PNG named `<index>.png` with six digits;
/// invalid frames are omitted.
pub fn write_frame_directory(dir: &Path, video: &VideoSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [t, h, w, c] = video.frames.shape();
    for i in 0..t {
        if !video.frame_valid[i] {
            continue;
        }
        let bytes: Vec<u8> = video.frames.frame(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let path = dir.join(format!("{i:06}.png"));
        let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        if c != 1 && c != 3 {
            return Err(Error::domain(format!("cannot write {c}-channel frames as images")));
        }
        image::save_buffer(&path, &bytes, w as u32, h as u32, color).map_err(|e| Error::format(&path, e.to_string()))?;
    }
    Ok(())
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// A `.dvt` tensor file or a directory of frame images, relative to the
    /// manifest's directory unless absolute.
    pub path: PathBuf,
    pub bdi_score: u32,
    pub split: Split,
}

/// Tab-separated `id  path  bdi_score  split`; blank lines and lines
/// starting with `#` are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
        let [id, p, bdi, split] = fields[..] else {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
        };
        out.push(ManifestEntry {
            id: id.to_string(),
            path: PathBuf::from(p),
            bdi_score: bdi.parse().map_err(|_| bad(format!("bad BDI-II score `{bdi}`")))?,
            split: split.parse().map_err(|e: Error| bad(e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::from("# id\tpath\tbdi_score\tsplit\n");
    for e in entries {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", e.id, e.path.display(), e.bdi_score, e.split));
    }
    write_atomic(path, s.as_bytes())
}

/// Loads every video a manifest lists.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut corpus = Corpus::default();
    for e in read_manifest(manifest)? {
        let path = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
        let (frames, valid) = if path.is_dir() {
            read_frame_directory(&path)?
        } else {
            read_video_tensor(&path)?
        };
        let sample = VideoSample::new(e.id.clone(), frames, valid, e.bdi_score)?;
        corpus.split.insert(e.id, e.split);
        corpus.samples.push(sample);
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Writes `videos/<id>.dvt` files and `manifest.tsv` under `dir`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    corpus.validate()?;
    let mut entries = Vec::with_capacity(corpus.samples.len());
    for v in &corpus.samples {
        let rel = PathBuf::from("videos").join(format!("{}.dvt", v.id));
        write_video_tensor(&dir.join(&rel), v)?;
        entries.push(ManifestEntry {
            id: v.id.clone(),
            path: rel,
            bdi_score: v.bdi_score,
            split: corpus.split[&v.id],
        });
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

fn matrix_bytes(path: &Path, magic: &[u8; 4], m: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = Vec::with_capacity(12 + m.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&dim_u32(path, rows)?.to_le_bytes());
    out.extend_from_slice(&dim_u32(path, cols)?.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Slice feature matrix: magic, S, M, then `S·M` row-major f32 values.
pub fn write_feature_matrix(path: &Path, feats: &SliceFeatureMatrix) -> Result<()> {
    write_atomic(path, &matrix_bytes(path, SFM_MAGIC, feats.values())?)
}

/// Reads a feature matrix; the parent id is the file stem.
pub fn read_feature_matrix(path: &Path) -> Result<SliceFeatureMatrix> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(SFM_MAGIC)?;
    let (s, m) = (r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(s * m)?;
    r.finish()?;
    let values = Tensor::new(vec![s, m], data.into_iter().map(f64::from).collect())?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    SliceFeatureMatrix::new(id, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Graph file: magic (`SPG1` or `SEG1`), vertex count, feature dimension
/// and edge count as u32; row-major f32 vertex features; `(src, dst, type)`
/// u32 triples. Sequential graphs append their window count and windows so
/// that windows without edges survive the round trip.
pub fn write_graph(path: &Path, graph: &VideoGraph) -> Result<()> {
    let (magic, edges) = match graph {
        VideoGraph::Spectral(_) => (SPG_MAGIC, graph.edges()),
        VideoGraph::Sequential(g) => (SEG_MAGIC, g.edges.clone()),
    };
    let f = graph.vertex_features();
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    for d in [f.shape()[0], f.shape()[1], edges.len()] {
        out.extend_from_slice(&dim_u32(path, d)?.to_le_bytes());
    }
    for &v in f.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for e in &edges {
        for d in [e.src, e.dst, e.kind] {
            out.extend_from_slice(&dim_u32(path, d)?.to_le_bytes());
        }
    }
    if let VideoGraph::Sequential(g) = graph {
        out.extend_from_slice(&dim_u32(path, g.window_set.len())?.to_le_bytes());
        for &w in &g.window_set {
            out.extend_from_slice(&dim_u32(path, w)?.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

pub fn read_graph(path: &Path) -> Result<VideoGraph> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    let (n, d, e) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(n * d)?;
    let vertex_features = Tensor::new(vec![n, d], data.into_iter().map(f64::from).collect())?;
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let edge = Edge {
            src: r.u32()? as usize,
            dst: r.u32()? as usize,
            kind: r.u32()? as usize,
        };
        if edge.src >= n || edge.dst >= n {
            return Err(Error::format(path, format!("edge {edge:?} references a missing vertex")));
        }
        edges.push(edge);
    }
    let graph = match &magic {
        m if m == SPG_MAGIC => {
            let g = SpectralGraph {
                vertex_features,
                channel_ids: (0..n).collect(),
            };
            if g.edges() != edges {
                return Err(Error::format(path, "spectral graph is not complete"));
            }
            VideoGraph::Spectral(g)
        }
        m if m == SEG_MAGIC => {
            let count = r.u32()? as usize;
            let window_set = (0..count).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
            VideoGraph::Sequential(SequentialGraph {
                vertex_features,
                edges,
                window_set,
            })
        }
        other => return Err(Error::format(path, format!("unknown graph magic {:?}", String::from_utf8_lossy(other)))),
    };
    r.finish()?;
    Ok(graph)
}

/// Writes `lines` to `path`, one per line.
pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        writeln!(w, "{}", l.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}
