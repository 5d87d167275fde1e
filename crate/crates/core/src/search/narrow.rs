use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::transformer::Architecture;

use super::space::SearchSpace;

/// Members of a search space predicted to run strictly below a latency bound.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrowedSpace {
    pub constraint_ms: f64,
    pub predictor_fingerprint: String,
    /// Lexicographically sorted members.
    members: Vec<Architecture>,
    predicted_ms: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    e: usize,
    h: usize,
    f: usize,
    predicted_ms: f64,
}

impl NarrowedSpace {
    pub fn from_members(
        constraint_ms: f64,
        predictor_fingerprint: String,
        mut members: Vec<(Architecture, f64)>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyNarrowedSpace {
                constraint_ms,
                fastest_ms: f64::NAN,
            });
        }
        members.sort_by_key(|m| m.0);
        members.dedup_by(|a, b| a.0 == b.0);
        let (members, predicted_ms) = members.into_iter().unzip();
        Ok(Self {
            constraint_ms,
            predictor_fingerprint,
            members,
            predicted_ms,
        })
    }

    pub fn members(&self) -> &[Architecture] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        self.members.binary_search(arch).is_ok()
    }

    /// Predicted latency of a member.
    pub fn predicted_ms(&self, arch: &Architecture) -> Option<f64> {
        self.members
            .binary_search(arch)
            .ok()
            .map(|i| self.predicted_ms[i])
    }

    /// Writes `# key=value` header lines followed by `e,h,f,predicted_ms` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        writeln!(file, "# constraint_ms={}", self.constraint_ms)?;
        writeln!(file, "# predictor={}", self.predictor_fingerprint)?;
        writeln!(file, "# members={}", self.members.len())?;
        let mut w = csv::Writer::from_writer(file);
        for (a, &p) in self.members.iter().zip(&self.predicted_ms) {
            w.serialize(Row {
                e: a.e,
                h: a.h,
                f: a.f,
                predicted_ms: p,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                what: "narrowed search space".into(),
            },
            _ => Error::Io(e),
        })?;
        let meta = |key: &str| {
            text.lines()
                .filter_map(|l| l.strip_prefix("# "))
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| Error::Input(format!("{} lacks the {key} header", path.display())))
        };
        let constraint_ms: f64 = meta("constraint_ms")?
            .parse()
            .map_err(|_| Error::Input("constraint_ms is not a number".into()))?;
        let fingerprint = meta("predictor")?;
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let members = r
            .deserialize::<Row>()
            .map(|row| row.map(|r| (Architecture::new(r.e, r.h, r.f), r.predicted_ms)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_members(constraint_ms, fingerprint, members)
    }
}

/// `{a in space : predict(a) < constraint_ms}`.
pub fn narrow_space(
    space: &SearchSpace,
    model: &dyn LatencyModel,
    constraint_ms: f64,
) -> Result<NarrowedSpace> {
    if !(constraint_ms > 0.0) {
        return Err(Error::Config(format!(
            "latency constraint must be positive, got {constraint_ms}"
        )));
    }
    space.validate()?;
    let all = space.enumerate();
    let predicted = model.predict_many(&all);
    let fastest_ms = predicted.iter().copied().fold(f64::INFINITY, f64::min);
    let members: Vec<(Architecture, f64)> = all
        .into_iter()
        .zip(predicted)
        .filter(|&(_, p)| p < constraint_ms)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyNarrowedSpace {
            constraint_ms,
            fastest_ms,
        });
    }
    NarrowedSpace::from_members(constraint_ms, model.fingerprint(), members)
}
