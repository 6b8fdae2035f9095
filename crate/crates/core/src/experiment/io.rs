//! CSV and JSON artifacts. CSV files use `.` decimals and LF line endings,
//! and floats are written in shortest round-trip form so re-reading them
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlmc::{Ensemble, Hierarchy, LevelPairEnsemble};
use crate::verification::{PitHistogram, ReferenceDensity};

/// The observed trajectory at observation time `t_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub k: u64,
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinRow {
    bin_lower: f64,
    bin_upper: f64,
    count: u64,
}

#[derive(Debug, Serialize)]
struct DensityRow {
    r: f64,
    density: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HierarchyRow {
    level: usize,
    sample_index: usize,
    time: f64,
    fine_value: f64,
    /// Empty on level 0.
    coarse_value: Option<f64>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else {
                unreachable!()
            };
            Error::io(path, io)
        }
        _ => Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        },
    }
}

fn parse_error(path: &Path, row: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every row, tagging each with its line number. Fails on an empty file.
fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in r.deserialize::<T>() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows.push((rows.len() as u64 + 2, record));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(rows)
}

fn check_finite(path: &Path, row: u64, name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(parse_error(path, row, format!("{name} is not finite: {x}")))
    }
}

pub fn write_histogram(path: &Path, hist: &PitHistogram) -> Result<()> {
    write_rows(
        path,
        hist.counts().iter().enumerate().map(|(i, &count)| {
            let (bin_lower, bin_upper) = hist.edges(i);
            BinRow {
                bin_lower,
                bin_upper,
                count,
            }
        }),
    )
}

/// Reads a histogram written by [`write_histogram`]; bins must be the equal
/// partition of `[0, 1]` in order.
pub fn read_histogram(path: &Path) -> Result<PitHistogram> {
    let rows: Vec<(u64, BinRow)> = read_rows(path)?;
    let bins = rows.len();
    let hist = PitHistogram::from_counts(rows.iter().map(|(_, r)| r.count).collect())?;
    for (i, (line, row)) in rows.iter().enumerate() {
        let (lo, hi) = hist.edges(i);
        if (row.bin_lower - lo).abs() > 1e-12 || (row.bin_upper - hi).abs() > 1e-12 {
            return Err(parse_error(
                path,
                *line,
                format!(
                    "bin {} spans [{}, {}), expected [{lo}, {hi}) for {bins} equal bins",
                    i + 1,
                    row.bin_lower,
                    row.bin_upper
                ),
            ));
        }
    }
    Ok(hist)
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    write_rows(path, observations)
}

/// Reads observations; times must be finite and strictly increasing.
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let rows: Vec<(u64, Observation)> = read_rows(path)?;
    let mut prev: Option<f64> = None;
    for (line, obs) in &rows {
        check_finite(path, *line, "time", obs.time)?;
        check_finite(path, *line, "value", obs.value)?;
        if prev.is_some_and(|p| obs.time <= p) {
            return Err(parse_error(
                path,
                *line,
                "observation times must strictly increase",
            ));
        }
        prev = Some(obs.time);
    }
    Ok(rows.into_iter().map(|(_, o)| o).collect())
}

pub fn write_reference_density(path: &Path, reference: &ReferenceDensity) -> Result<()> {
    write_rows(
        path,
        reference
            .r
            .iter()
            .zip(&reference.density)
            .map(|(&r, &density)| DensityRow { r, density }),
    )
}

/// Appends one snapshot of every ensemble member per observation time.
pub struct HierarchyWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl HierarchyWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv_writer(path)?,
        })
    }

    pub fn write_snapshot(&mut self, time: f64, h: &Hierarchy) -> Result<()> {
        let level0 = h
            .level0()
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| HierarchyRow {
                level: 0,
                sample_index: i,
                time,
                fine_value: v,
                coarse_value: None,
            });
        let pairs = h.pairs().iter().enumerate().flat_map(|(l, p)| {
            p.fine()
                .iter()
                .zip(p.coarse())
                .enumerate()
                .map(move |(i, (&f, &c))| HierarchyRow {
                    level: l + 1,
                    sample_index: i,
                    time,
                    fine_value: f,
                    coarse_value: Some(c),
                })
        });
        for row in level0.chain(pairs) {
            self.writer
                .serialize(row)
                .map_err(|e| csv_error(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads `hierarchy.csv` as `(time, hierarchy)` snapshots in file order.
/// Rows of one snapshot must be contiguous; within it, each level must carry
/// sample indices `0..N_l` and every level `l >= 1` a coarse value per couple.
pub fn read_hierarchy(path: &Path) -> Result<Vec<(f64, Hierarchy)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut snapshots = Vec::new();
    let mut current: Option<(f64, u64, Vec<HierarchyRow>)> = None;
    for (i, record) in r.deserialize::<HierarchyRow>().enumerate() {
        let line = i as u64 + 2;
        let row = record.map_err(|e| csv_error(path, e))?;
        check_finite(path, line, "time", row.time)?;
        check_finite(path, line, "fine_value", row.fine_value)?;
        if let Some(c) = row.coarse_value {
            check_finite(path, line, "coarse_value", c)?;
        }
        match &mut current {
            Some((t, _, rows)) if *t == row.time => rows.push(row),
            _ => {
                if let Some((t, first, rows)) = current.take() {
                    if snapshots.last().is_some_and(|(prev, _)| *prev >= t) {
                        return Err(parse_error(
                            path,
                            first,
                            "snapshot times must strictly increase",
                        ));
                    }
                    snapshots.push((t, assemble(path, first, rows)?));
                }
                current = Some((row.time, line, vec![row]));
            }
        }
    }
    match current {
        Some((t, first, rows)) => {
            if snapshots.last().is_some_and(|(prev, _)| *prev >= t) {
                return Err(parse_error(
                    path,
                    first,
                    "snapshot times must strictly increase",
                ));
            }
            snapshots.push((t, assemble(path, first, rows)?));
        }
        None => return Err(Error::EmptyInput(path.to_path_buf())),
    }
    Ok(snapshots)
}

fn assemble(path: &Path, first_line: u64, rows: Vec<HierarchyRow>) -> Result<Hierarchy> {
    let time = rows[0].time;
    let structure = |msg: String| {
        Error::Structure(format!(
            "{} (snapshot at t = {time}, from row {first_line}): {msg}",
            path.display()
        ))
    };
    let mut levels: BTreeMap<usize, Vec<(usize, f64, Option<f64>)>> = BTreeMap::new();
    for row in rows {
        levels.entry(row.level).or_default().push((
            row.sample_index,
            row.fine_value,
            row.coarse_value,
        ));
    }
    let max_level = *levels.keys().next_back().expect("snapshot has rows");
    if levels.len() != max_level + 1 {
        return Err(structure(format!(
            "levels present are {:?}, expected 0..={max_level}",
            levels.keys().collect::<Vec<_>>()
        )));
    }
    let mut level0 = Vec::new();
    let mut pairs = Vec::new();
    for (level, mut members) in levels {
        members.sort_by_key(|m| m.0);
        if let Some(pos) = members.iter().enumerate().position(|(i, m)| m.0 != i) {
            return Err(structure(format!(
                "level {level} sample indices are not 0..{} (found {} at position {pos})",
                members.len(),
                members[pos].0
            )));
        }
        let fine: Vec<f64> = members.iter().map(|m| m.1).collect();
        let coarse: Vec<f64> = members.iter().filter_map(|m| m.2).collect();
        if level == 0 {
            if !coarse.is_empty() {
                return Err(structure(
                    "level 0 rows must leave coarse_value empty".to_string(),
                ));
            }
            level0 = fine;
        } else {
            if coarse.len() != fine.len() {
                return Err(structure(format!(
                    "level {level} has {} fine values but {} coarse values",
                    fine.len(),
                    coarse.len()
                )));
            }
            pairs.push(LevelPairEnsemble::new(fine, coarse)?);
        }
    }
    Hierarchy::new(Ensemble::new(level0), pairs)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        row: e.line() as u64,
        message: e.to_string(),
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verification::build_histogram;

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let hist = build_histogram(&[0.0, 0.1, 0.55, 1.0, 0.99], 20).unwrap();
        write_histogram(&path, &hist).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.starts_with("bin_lower,bin_upper,count\n0.0,0.05,1\n"),
            "{text}"
        );
        assert!(!text.contains('\r'));
        assert_eq!(read_histogram(&path).unwrap().counts(), hist.counts());
    }

    #[test]
    fn histogram_with_bad_edges_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "bin_lower,bin_upper,count\n0,0.5,3\n0.4,1,2\n").unwrap();
        match read_histogram(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observations_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        let obs: Vec<Observation> = (1..=5)
            .map(|k| Observation {
                k,
                time: k as f64,
                value: (k as f64 * 0.7).sin() / 3.0,
            })
            .collect();
        write_observations(&path, &obs).unwrap();
        assert_eq!(read_observations(&path).unwrap(), obs);
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        std::fs::write(&path, "k,time,value\n1,1.0,0.5\n2,2.0,abc\n").unwrap();
        match read_observations(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "k,time,value\n1,2.0,0.5\n2,1.0,0.1\n").unwrap();
        match read_observations(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "k,time,value\n").unwrap();
        assert!(matches!(
            read_observations(&path),
            Err(Error::EmptyInput(_))
        ));
    }

    fn small_hierarchy(shift: f64) -> Hierarchy {
        Hierarchy::new(
            Ensemble::new(vec![0.1 + shift, -0.2, 1.0 / 3.0]),
            vec![LevelPairEnsemble::new(vec![0.5, 0.25], vec![0.4, 0.3 + shift]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn hierarchy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let mut w = HierarchyWriter::create(&path).unwrap();
        w.write_snapshot(1.0, &small_hierarchy(0.0)).unwrap();
        w.write_snapshot(2.0, &small_hierarchy(1e-9)).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\n0,0,1.0,0.1,\n"), "{text}");
        let snaps = read_hierarchy(&path).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0], (1.0, small_hierarchy(0.0)));
        assert_eq!(snaps[1], (2.0, small_hierarchy(1e-9)));
    }

    #[test]
    fn hierarchy_structure_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let header = "level,sample_index,time,fine_value,coarse_value\n";
        std::fs::write(
            &path,
            format!("{header}0,0,1,0.1,\n1,0,1,0.2,0.3\n1,1,1,0.2,\n"),
        )
        .unwrap();
        assert!(matches!(read_hierarchy(&path), Err(Error::Structure(_))));
        std::fs::write(&path, format!("{header}0,0,1,0.1,\n2,0,1,0.2,0.3\n")).unwrap();
        assert!(matches!(read_hierarchy(&path), Err(Error::Structure(_))));
        std::fs::write(&path, format!("{header}0,0,1,0.1,\n0,2,1,0.2,\n")).unwrap();
        assert!(matches!(read_hierarchy(&path), Err(Error::Structure(_))));
        std::fs::write(&path, header).unwrap();
        assert!(matches!(read_hierarchy(&path), Err(Error::EmptyInput(_))));
        std::fs::write(&path, format!("{header}0,0,1,x,\n")).unwrap();
        assert!(matches!(
            read_hierarchy(&path),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc");
        std::fs::write(&path, "abc").unwrap();
        let (digest, bytes) = sha256_file(&path).unwrap();
        assert_eq!(bytes, 3);
        assert_eq!(
            digest,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
