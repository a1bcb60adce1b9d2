use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One team at one step of a recorded episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamRecord {
    pub commander: usize,
    pub members: Vec<usize>,
    pub z: usize,
    /// Greedy intention each member would pick from its own observation.
    pub observer_z: Vec<usize>,
}

/// One line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: usize,
    pub positions: Vec<[i64; 2]>,
    pub prey: Vec<[i64; 2]>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub teams: Option<Vec<TeamRecord>>,
}

/// Line-delimited JSON writer for trajectory records.
pub struct DumpWriter {
    out: BufWriter<File>,
}

impl DumpWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        Ok(DumpWriter { out })
    }

    pub fn write(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec).map_err(|e| Error::Format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read every record of a dump file, skipping `#` comment lines.
pub fn read_dump(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(t)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
