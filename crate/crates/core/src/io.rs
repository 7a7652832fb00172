//! JSON interchange for complex matrices and states.
//!
//! Complex matrices are `{"dim": C, "re": [...], "im": [...], "time": t}`
//! with row-major `re`/`im`; Hermitian operators use the same layout
//! without `"time"`. State vectors are `{"dim": C, "re": [...], "im": [...]}`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, CMatrix, CVector};
use crate::quantum::{HermitianOperator, Propagator, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexMatrixJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl ComplexMatrixJson {
    pub fn from_matrix(m: &CMatrix, time: Option<f64>) -> Self {
        let dim = m.nrows();
        let row_major = || (0..dim).flat_map(move |i| (0..dim).map(move |j| (i, j)));
        Self {
            dim,
            re: row_major().map(|(i, j)| m[(i, j)].re).collect(),
            im: row_major().map(|(i, j)| m[(i, j)].im).collect(),
            time,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.dim * self.dim;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.re.len().min(self.im.len()) });
        }
        let entries: Vec<_> = self.re.iter().zip(&self.im).map(|(&r, &i)| c(r, i)).collect();
        Ok(CMatrix::from_row_slice(self.dim, self.dim, &entries))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateVectorJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Serialize for Propagator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexMatrixJson::from_matrix(self.entries(), Some(self.time())).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Propagator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ComplexMatrixJson::deserialize(d)?;
        let m = j.to_matrix().map_err(serde::de::Error::custom)?;
        Propagator::new(m, j.time.unwrap_or(0.0)).map_err(serde::de::Error::custom)
    }
}

impl Serialize for HermitianOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexMatrixJson::from_matrix(self.entries(), None).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ComplexMatrixJson::deserialize(d)?;
        if j.time.is_some() {
            return Err(serde::de::Error::custom("Hermitian operators carry no time"));
        }
        let m = j.to_matrix().map_err(serde::de::Error::custom)?;
        HermitianOperator::new(m).map_err(serde::de::Error::custom)
    }
}

impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let a = self.amplitudes();
        StateVectorJson { dim: a.len(), re: a.iter().map(|z| z.re).collect(), im: a.iter().map(|z| z.im).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = StateVectorJson::deserialize(d)?;
        if j.re.len() != j.dim || j.im.len() != j.dim {
            return Err(serde::de::Error::custom("amplitude arrays must have length dim"));
        }
        let v = CVector::from_iterator(j.dim, j.re.iter().zip(&j.im).map(|(&r, &i)| c(r, i)));
        StateVector::new(v).map_err(serde::de::Error::custom)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|mut s| {
        s.push('\n');
        s
    })
    .map_err(|e| Error::Format(e.to_string()))
}
