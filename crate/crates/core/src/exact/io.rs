//! On-disk form of exact solutions: a versioned little-endian binary file
//! for reloading, plus a CSV dump (state coordinates, value, action label)
//! for inspection.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use super::DiscreteMdp;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"VSOL";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SolutionIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a solution file (bad magic)")]
    BadMagic,
    #[error("unsupported solution file version {0}")]
    Version(u32),
    #[error("truncated solution file")]
    Truncated,
}

/// A solved problem: optimal values and the greedy policy, with the state
/// coordinates carried along for dumps and start-state lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub discount: f64,
    pub values: Vec<f64>,
    /// Per-state index into the state's action list.
    pub policy: Vec<u32>,
    /// Per-state action label (resource-level delta).
    pub policy_labels: Vec<i32>,
    pub coords: Vec<Vec<f64>>,
    pub coord_names: Vec<String>,
}

impl ExactSolution {
    pub fn from_parts<S: Scalar>(
        mdp: &DiscreteMdp<S>,
        values: &DVector<S>,
        policy: &[u32],
    ) -> Self {
        let policy_labels = policy
            .iter()
            .enumerate()
            .map(|(s, &a)| mdp.actions[s][a as usize].label)
            .collect();
        Self {
            discount: mdp.discount.to_f64x(),
            values: values.iter().map(|v| v.to_f64x()).collect(),
            policy: policy.to_vec(),
            policy_labels,
            coords: mdp
                .coords
                .iter()
                .map(|row| row.iter().map(|v| v.to_f64x()).collect())
                .collect(),
            coord_names: mdp.coord_names.clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }
}

pub fn save_solution_binary(path: &Path, sol: &ExactSolution) -> Result<(), SolutionIoError> {
    let io_err = |source| SolutionIoError::Io { path: path.display().to_string(), source };
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&sol.discount.to_le_bytes());
    buf.extend_from_slice(&(sol.values.len() as u64).to_le_bytes());
    for v in &sol.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for a in &sol.policy {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    for l in &sol.policy_labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    let dims = sol.coords.first().map(|c| c.len()).unwrap_or(0) as u32;
    buf.extend_from_slice(&dims.to_le_bytes());
    for row in &sol.coords {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&(sol.coord_names.len() as u32).to_le_bytes());
    for name in &sol.coord_names {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn load_solution_binary(path: &Path) -> Result<ExactSolution, SolutionIoError> {
    let io_err = |source| SolutionIoError::Io { path: path.display().to_string(), source };
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], SolutionIoError> {
        if *cursor + n > bytes.len() {
            return Err(SolutionIoError::Truncated);
        }
        let out = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(out)
    };
    if take(&mut cursor, 4)? != MAGIC {
        return Err(SolutionIoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(SolutionIoError::Version(version));
    }
    let discount = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let n = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
    }
    let mut policy = Vec::with_capacity(n);
    for _ in 0..n {
        policy.push(u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()));
    }
    let mut policy_labels = Vec::with_capacity(n);
    for _ in 0..n {
        policy_labels.push(i32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()));
    }
    let dims = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(dims);
        for _ in 0..dims {
            row.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
        }
        coords.push(row);
    }
    let n_names = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut coord_names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        let len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(take(&mut cursor, len)?).into_owned();
        coord_names.push(name);
    }
    Ok(ExactSolution { discount, values, policy, policy_labels, coords, coord_names })
}

pub fn save_solution_csv(path: &Path, sol: &ExactSolution) -> Result<(), SolutionIoError> {
    let io_err = |source| SolutionIoError::Io { path: path.display().to_string(), source };
    let mut out = String::from("state");
    for name in &sol.coord_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",value,action\n");
    for s in 0..sol.n_states() {
        out.push_str(&s.to_string());
        if let Some(row) = sol.coords.get(s) {
            for v in row {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push_str(&format!(",{},{}\n", sol.values[s], sol.policy_labels[s]));
    }
    fs::write(path, out).map_err(io_err)
}
