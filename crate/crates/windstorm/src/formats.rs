//! On-disk formats: the binary field-stack container, track and footprint
//! catalogs as CSV.
//!
//! Field-stack layout, little-endian throughout: magic `WSFSTK01`, `u32 n_x`,
//! `u32 n_y`, `f64 cell_size`, `f64 origin_lon`, `f64 origin_lat`, `u32 n_t`,
//! `u8 scale_tag`, then `n_t` rasters of `n_y·n_x` `f32` values, row-major.
//! Time steps are implicit: raster `k` holds step `k + 1`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use windstorm_core::extract::{Ellipse, FootprintFeatures, StepFootprint, WindstormRecord};
use windstorm_core::{CellMask, Grid, GriddedFieldStack, ScaleTag, StormTrack, TrackPoint};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WSFSTK01";
pub const HEADER_LEN: usize = 45;
pub const TRACK_HEADER: [&str; 5] = ["track_id", "t", "lon", "lat", "vorticity"];
pub const CATALOG_HEADER: [&str; 16] =
    ["track_id", "t", "active", "A", "B", "W", "R_E", "Theta_E", "R_W", "Theta_W", "Gamma", "cx", "cy", "Exx", "Exy", "Eyy"];

pub fn encode_field_stack(stack: &GriddedFieldStack) -> Result<Vec<u8>> {
    if stack.times.iter().enumerate().any(|(k, &t)| t != k as i64 + 1) {
        return Err(Error::Usage("field-stack files hold time steps 1..n_t only".into()));
    }
    let g = &stack.grid;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stack.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.n_x as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_y as u32).to_le_bytes());
    out.extend_from_slice(&g.cell_size.to_le_bytes());
    out.extend_from_slice(&g.origin_lon.to_le_bytes());
    out.extend_from_slice(&g.origin_lat.to_le_bytes());
    out.extend_from_slice(&(stack.n_t() as u32).to_le_bytes());
    out.push(stack.scale.code());
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, self.bytes.len() as u64, format!("truncated header: missing {what}")));
        }
        let out = self.bytes[self.pos..end].try_into().expect("slice of length N");
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }
}

/// Decode a field stack; `path` only labels errors.
pub fn decode_field_stack(bytes: &[u8], path: &Path) -> Result<GriddedFieldStack> {
    let mut c = Cursor { bytes, pos: 0, path };
    if &c.take::<8>("magic")? != MAGIC {
        return Err(Error::format(path, 0, "bad magic bytes, expected WSFSTK01"));
    }
    let n_x = c.u32("n_x")?;
    let n_y = c.u32("n_y")?;
    let cell_size = c.f64("cell_size")?;
    let origin_lon = c.f64("origin_lon")?;
    let origin_lat = c.f64("origin_lat")?;
    let n_t = c.u32("n_t")?;
    let tag = c.take::<1>("scale_tag")?[0];
    let grid = Grid::new(n_x as usize, n_y as usize, cell_size, origin_lon, origin_lat)
        .map_err(|e| Error::format(path, 8, format!("invalid grid header: {e}")))?;
    let scale = ScaleTag::from_code(tag).ok_or_else(|| Error::format(path, 44, format!("unknown scale tag {tag}")))?;
    let payload = (n_t as u64) * (n_x as u64) * (n_y as u64) * 4;
    let have = (bytes.len() - HEADER_LEN) as u64;
    if have < payload {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated payload: {payload} bytes of rasters expected, {have} present"),
        ));
    }
    if have > payload {
        return Err(Error::format(path, HEADER_LEN as u64 + payload, "trailing bytes after the last raster"));
    }
    let data: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk"))).collect();
    let times = (1..=n_t as i64).collect();
    GriddedFieldStack::new(grid, times, scale, data).map_err(|e| Error::format(path, HEADER_LEN as u64, e.to_string()))
}

pub fn read_field_stack(path: &Path) -> Result<GriddedFieldStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field_stack(&bytes, path)
}

pub fn write_field_stack(path: &Path, stack: &GriddedFieldStack) -> Result<()> {
    let bytes = encode_field_stack(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<CellMask> {
    let stack = read_field_stack(path)?;
    CellMask::from_stack(&stack).map_err(|e| Error::content(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &CellMask) -> Result<()> {
    write_field_stack(path, &mask.to_stack())
}

/// Track and entry ids become file names, so they are restricted to a
/// portable character set.
pub fn check_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-#".contains(&b)) && !id.starts_with('.')
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let got = rdr.headers().map_err(|e| Error::content(path, e.to_string()))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::content(path, format!("header must be exactly `{}`", header.join(","))));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::content(path, format!("line {line}: non-numeric {name} `{raw}`")))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::content(path, e.to_string())
}

/// Group rows by id in order of first appearance.
fn group<T>(rows: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut order: Vec<(String, Vec<T>)> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (id, row) in rows {
        let k = *pos.entry(id.clone()).or_insert_with(|| {
            order.push((id, Vec::new()));
            order.len() - 1
        });
        order[k].1.push(row);
    }
    order
}

/// Read tracks; rows may interleave tracks and appear in any time order, but
/// each track's steps must be exactly `1..=ℓ`.
pub fn read_tracks(path: &Path) -> Result<Vec<StormTrack>> {
    let mut rdr = open_csv(path, &TRACK_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let p = TrackPoint {
            t: field(path, &rec, 1, "t")?,
            lon: field(path, &rec, 2, "lon")?,
            lat: field(path, &rec, 3, "lat")?,
            vorticity: field(path, &rec, 4, "vorticity")?,
        };
        rows.push((id, p));
    }
    group(rows)
        .into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by_key(|p| p.t);
            if pts.iter().enumerate().any(|(i, p)| p.t != i as i64 + 1) {
                return Err(Error::content(path, format!("track {id}: non-consecutive time (steps must be 1..ℓ)")));
            }
            StormTrack::new(id.clone(), pts).map_err(|e| Error::content(path, format!("track {id}: {e}")))
        })
        .collect()
}

pub fn write_tracks(path: &Path, tracks: &[StormTrack]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACK_HEADER).map_err(|e| csv_err(path, e))?;
    for tr in tracks {
        for p in &tr.points {
            let row = [tr.id.clone(), p.t.to_string(), p.lon.to_string(), p.lat.to_string(), p.vorticity.to_string()];
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write footprint catalogs, one row per track step.
pub fn write_catalog(path: &Path, records: &[WindstormRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CATALOG_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        for (i, s) in r.steps.iter().enumerate() {
            let mut row = vec![r.track_id.clone(), (i + 1).to_string()];
            match s {
                Some(fp) => {
                    let f = &fp.features;
                    let e = &fp.ellipse;
                    row.push("1".into());
                    row.extend(
                        [f.a, f.b, f.w, f.r_e, f.theta_e, f.r_w, f.theta_w, f.gamma, e.c[0], e.c[1], e.exx, e.exy, e.eyy]
                            .iter()
                            .map(f64::to_string),
                    );
                }
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), 13));
                }
            }
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_catalog(path: &Path) -> Result<Vec<WindstormRecord>> {
    let mut rdr = open_csv(path, &CATALOG_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let t: usize = field(path, &rec, 1, "t")?;
        let active: u8 = field(path, &rec, 2, "active")?;
        let fp = match active {
            0 => None,
            1 => {
                let v = (3..16).map(|i| field::<f64>(path, &rec, i, CATALOG_HEADER[i])).collect::<Result<Vec<_>>>()?;
                let ellipse = Ellipse::new([v[8], v[9]], v[10], v[11], v[12])
                    .map_err(|e| Error::content(path, format!("track {id} step {t}: {e}")))?;
                let features = FootprintFeatures {
                    t: t as i64,
                    a: v[0],
                    b: v[1],
                    w: v[2],
                    r_e: v[3],
                    theta_e: v[4],
                    r_w: v[5],
                    theta_w: v[6],
                    gamma: v[7],
                };
                Some(StepFootprint { ellipse, features })
            }
            _ => return Err(Error::content(path, format!("track {id} step {t}: active must be 0 or 1"))),
        };
        rows.push((id, (t, fp)));
    }
    group(rows)
        .into_iter()
        .map(|(id, mut steps)| {
            steps.sort_by_key(|s| s.0);
            if steps.iter().enumerate().any(|(i, s)| s.0 != i + 1) {
                return Err(Error::content(path, format!("track {id}: non-consecutive time (steps must be 1..ℓ)")));
            }
            Ok(WindstormRecord { track_id: id, steps: steps.into_iter().map(|s| s.1).collect() })
        })
        .collect()
}
