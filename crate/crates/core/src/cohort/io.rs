use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::{Array3, ShapeBuilder};

use super::{Cohort, ConnectivityVector, Diagnosis, SubjectRecord, Volume};
use crate::error::{Error, Result};

const NIFTI_HEADER_LEN: usize = 348;
const NIFTI_VOX_OFFSET: u64 = 352;

/// Read a NIfTI-1 volume (.nii or .nii.gz). Only the voxel grid is used;
/// affine and orientation fields are ignored. Returns raw (unnormalized)
/// intensities in Fortran (x-fastest) order mapped to an (d1, d2, d3) array.
pub fn load_nifti(path: &Path) -> Result<Array3<f64>> {
    let mut raw = Vec::new();
    let f = File::open(path)
        .map_err(|e| Error::Nifti(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(f);
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic)?;
    if magic == [0x1f, 0x8b] {
        let chained = magic.chain(reader);
        GzDecoder::new(chained).read_to_end(&mut raw)?;
    } else {
        raw.extend_from_slice(&magic);
        reader.read_to_end(&mut raw)?;
    }
    if raw.len() < NIFTI_VOX_OFFSET as usize {
        return Err(Error::Nifti(format!("{}: truncated header", path.display())));
    }
    let szle = LittleEndian::read_i32(&raw[0..4]);
    let szbe = BigEndian::read_i32(&raw[0..4]);
    if szle == NIFTI_HEADER_LEN as i32 {
        parse_nifti::<LittleEndian>(&raw, path)
    } else if szbe == NIFTI_HEADER_LEN as i32 {
        parse_nifti::<BigEndian>(&raw, path)
    } else {
        Err(Error::Nifti(format!(
            "{}: not a NIfTI-1 file (sizeof_hdr {szle})",
            path.display()
        )))
    }
}

fn parse_nifti<E: ByteOrder>(raw: &[u8], path: &Path) -> Result<Array3<f64>> {
    let dim0 = E::read_i16(&raw[40..42]);
    if dim0 < 3 {
        return Err(Error::Nifti(format!(
            "{}: expected >=3 dimensions, got {dim0}",
            path.display()
        )));
    }
    let dims = [
        E::read_i16(&raw[42..44]) as usize,
        E::read_i16(&raw[44..46]) as usize,
        E::read_i16(&raw[46..48]) as usize,
    ];
    // Trailing dims beyond 3 must be singleton.
    for d in 0..(dim0 as usize - 3) {
        let extra = E::read_i16(&raw[48 + 2 * d..50 + 2 * d]);
        if extra > 1 {
            return Err(Error::Nifti(format!(
                "{}: 4-D+ volumes unsupported",
                path.display()
            )));
        }
    }
    let datatype = E::read_i16(&raw[70..72]);
    let vox_offset = E::read_f32(&raw[108..112]) as usize;
    let scl_slope = E::read_f32(&raw[112..116]) as f64;
    let scl_inter = E::read_f32(&raw[116..120]) as f64;
    let n = dims[0] * dims[1] * dims[2];
    if n == 0 {
        return Err(Error::Nifti(format!("{}: zero-sized volume", path.display())));
    }
    let bytes_per = match datatype {
        2 => 1,
        4 | 512 => 2,
        8 | 16 => 4,
        64 => 8,
        other => {
            return Err(Error::Nifti(format!(
                "{}: unsupported datatype code {other}",
                path.display()
            )))
        }
    };
    let start = vox_offset.max(NIFTI_VOX_OFFSET as usize);
    if raw.len() < start + n * bytes_per {
        return Err(Error::Nifti(format!(
            "{}: data truncated ({} of {} bytes)",
            path.display(),
            raw.len().saturating_sub(start),
            n * bytes_per
        )));
    }
    let body = &raw[start..start + n * bytes_per];
    let mut data = Vec::with_capacity(n);
    match datatype {
        2 => data.extend(body.iter().map(|&b| b as f64)),
        4 => data.extend((0..n).map(|i| E::read_i16(&body[2 * i..]) as f64)),
        512 => data.extend((0..n).map(|i| E::read_u16(&body[2 * i..]) as f64)),
        8 => data.extend((0..n).map(|i| E::read_i32(&body[4 * i..]) as f64)),
        16 => data.extend((0..n).map(|i| E::read_f32(&body[4 * i..]) as f64)),
        64 => data.extend((0..n).map(|i| E::read_f64(&body[8 * i..]))),
        _ => unreachable!(),
    }
    if scl_slope != 0.0 && (scl_slope != 1.0 || scl_inter != 0.0) {
        for v in data.iter_mut() {
            *v = *v * scl_slope + scl_inter;
        }
    }
    Array3::from_shape_vec((dims[0], dims[1], dims[2]).f(), data)
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))
}

/// Write voxels as a float64 NIfTI-1 file; gzip when the path ends in .gz.
pub fn save_nifti(path: &Path, voxels: &Array3<f64>) -> Result<()> {
    let mut header = vec![0u8; NIFTI_VOX_OFFSET as usize];
    LittleEndian::write_i32(&mut header[0..4], NIFTI_HEADER_LEN as i32);
    let d = voxels.dim();
    let dims = [3i16, d.0 as i16, d.1 as i16, d.2 as i16, 1, 1, 1, 1];
    for (i, v) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut header[40 + 2 * i..42 + 2 * i], *v);
    }
    LittleEndian::write_i16(&mut header[70..72], 64); // float64
    LittleEndian::write_i16(&mut header[72..74], 64); // bitpix
    for i in 0..8 {
        LittleEndian::write_f32(&mut header[76 + 4 * i..80 + 4 * i], 1.0);
    }
    LittleEndian::write_f32(&mut header[108..112], NIFTI_VOX_OFFSET as f32);
    header[344..348].copy_from_slice(b"n+1\0");

    let file = File::create(path)?;
    let mut out: Box<dyn Write> = if path.extension().and_then(|e| e.to_str()) == Some("gz") {
        Box::new(GzEncoder::new(BufWriter::new(file), flate2::Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    out.write_all(&header)?;
    // Fortran order: first axis fastest.
    for k in 0..d.2 {
        for j in 0..d.1 {
            for i in 0..d.0 {
                out.write_f64::<LittleEndian>(voxels[[i, j, k]])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn fnc_delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    }
}

fn read_fnc_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(fnc_delimiter(path))
        .from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidConnectivity(format!("FNC table: {e}")))?);
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::InvalidConnectivity(
                "FNC table rows have inconsistent lengths".into(),
            ));
        }
    }
    Ok(rows)
}

struct ManifestRow {
    subject_id: String,
    diagnosis: Diagnosis,
    volume_path: Option<String>,
    fnc_row_index: Option<usize>,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("subject_id")
        .ok_or_else(|| Error::Manifest("missing subject_id column".into()))?;
    let dx_col =
        col("diagnosis").ok_or_else(|| Error::Manifest("missing diagnosis column".into()))?;
    let vol_col = col("volume_path");
    let fnc_col = col("fnc_row_index");
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let get = |i: Option<usize>| i.and_then(|i| rec.get(i)).map(|s| s.trim().to_string());
        let volume_path = get(vol_col).filter(|s| !s.is_empty());
        let fnc_row_index = match get(fnc_col).filter(|s| !s.is_empty()) {
            Some(s) => Some(
                s.parse::<usize>()
                    .map_err(|e| Error::Manifest(format!("bad fnc_row_index '{s}': {e}")))?,
            ),
            None => None,
        };
        rows.push(ManifestRow {
            subject_id: rec
                .get(id_col)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Manifest("empty subject_id".into()))?,
            diagnosis: Diagnosis::parse(
                rec.get(dx_col)
                    .ok_or_else(|| Error::Manifest("missing diagnosis value".into()))?,
            )?,
            volume_path,
            fnc_row_index,
        });
    }
    Ok(rows)
}

/// Load a cohort from a manifest, an FNC table and a directory of NIfTI
/// volumes. Volumes are rescaled linearly to [-1, 1] using the cohort-wide
/// min/max; data already inside [-1, 1] is taken as-is so normalized
/// cohorts round-trip through disk.
pub fn load_cohort(volume_dir: &Path, fnc_table: &Path, manifest: &Path) -> Result<Cohort> {
    let rows = read_manifest(manifest)?;
    if rows.is_empty() {
        return Err(Error::Manifest("manifest has no rows".into()));
    }
    let fnc_rows = if rows.iter().any(|r| r.fnc_row_index.is_some()) {
        read_fnc_table(fnc_table)?
    } else {
        Vec::new()
    };

    // First pass: raw volumes plus cohort intensity range.
    let mut raw_volumes: Vec<Option<Array3<f64>>> = Vec::with_capacity(rows.len());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut shape: Option<[usize; 3]> = None;
    for row in &rows {
        match &row.volume_path {
            Some(rel) => {
                let vpath = volume_dir.join(rel);
                if !vpath.exists() {
                    return Err(Error::Manifest(format!(
                        "subject {}: volume file {} does not exist",
                        row.subject_id,
                        vpath.display()
                    )));
                }
                let vox = load_nifti(&vpath)?;
                let d = vox.dim();
                let s = [d.0, d.1, d.2];
                match shape {
                    None => shape = Some(s),
                    Some(prev) if prev != s => {
                        return Err(Error::InvalidCohort(format!(
                            "volume shape {s:?} differs from {prev:?}"
                        )))
                    }
                    _ => {}
                }
                for v in vox.iter() {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                raw_volumes.push(Some(vox));
            }
            None => raw_volumes.push(None),
        }
    }
    let rescale = hi > 1.0 || lo < -1.0;
    let span = hi - lo;

    let mut records = Vec::with_capacity(rows.len());
    let mut fnc_dim: Option<usize> = None;
    for (row, raw) in rows.iter().zip(raw_volumes) {
        let t1 = match raw {
            Some(mut vox) => {
                if rescale {
                    if span > 0.0 {
                        vox.mapv_inplace(|v| -1.0 + 2.0 * (v - lo) / span);
                    } else {
                        vox.fill(0.0);
                    }
                }
                Some(Volume::new(vox)?)
            }
            None => None,
        };
        let fnc = match row.fnc_row_index {
            Some(i) => {
                let r = fnc_rows.get(i).ok_or_else(|| {
                    Error::Manifest(format!(
                        "subject {}: fnc_row_index {i} out of range ({} rows)",
                        row.subject_id,
                        fnc_rows.len()
                    ))
                })?;
                let v = ConnectivityVector::from_flat(r.clone())?;
                match fnc_dim {
                    None => fnc_dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(Error::InvalidConnectivity(
                            "inconsistent FNC lengths across subjects".into(),
                        ))
                    }
                    _ => {}
                }
                Some(v)
            }
            None => None,
        };
        records.push(SubjectRecord {
            subject_id: row.subject_id.clone(),
            diagnosis: row.diagnosis,
            fnc,
            t1,
        });
    }
    let fnc_dim = fnc_dim.unwrap_or(0);
    let volume_shape = shape.unwrap_or([0, 0, 0]);
    Cohort::new(records, fnc_dim, volume_shape)
}

/// Serialize a cohort into `dir` using the ingestion formats: per-subject
/// NIfTI volumes under `volumes/`, an `fnc.csv` table, and `manifest.csv`.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("volumes"))?;
    let mut fnc_writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("fnc.csv"))?;
    let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))?;
    manifest.write_record(["subject_id", "diagnosis", "volume_path", "fnc_row_index"])?;
    let mut fnc_row = 0usize;
    for rec in cohort.records() {
        let vol_path = match &rec.t1 {
            Some(v) => {
                let rel = format!("volumes/{}.nii.gz", rec.subject_id);
                save_nifti(&dir.join(&rel), v.voxels())?;
                rel
            }
            None => String::new(),
        };
        let fnc_idx = match &rec.fnc {
            Some(f) => {
                let row: Vec<String> = f.values().iter().map(|v| format!("{v}")).collect();
                fnc_writer.write_record(&row)?;
                let s = fnc_row.to_string();
                fnc_row += 1;
                s
            }
            None => String::new(),
        };
        manifest.write_record([
            rec.subject_id.as_str(),
            rec.diagnosis.as_str(),
            &vol_path,
            &fnc_idx,
        ])?;
    }
    fnc_writer.flush()?;
    manifest.flush()?;
    Ok(())
}
