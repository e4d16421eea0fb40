//! Ordinal binary encoding of clinical conditions.
//!
//! Each attribute occupies a 100-slot 0/1 vector. The time interval uses a step
//! code that splits at slot 50: slots `1..=50+Δ` are 0 and the rest are 1
//! (1-based), so Hamming distance between two codes equals `|Δ₁ − Δ₂|`. Age
//! uses the mirrored thermometer (first `age` slots set) and sex is a constant
//! block.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

pub const SLOT_WIDTH: usize = 100;
pub const CONDITION_WIDTH: usize = 3 * SLOT_WIDTH;
pub const MAX_AGE: u32 = 99;
pub const MAX_DELTA_MONTHS: i32 = 49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(Error::Config(format!("unknown sex {other:?}"))),
        }
    }
}

/// Age at the source scan, sex, and signed months to the target (positive = future).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClinicalCondition {
    age: u32,
    sex: Sex,
    delta_months: i32,
}

impl ClinicalCondition {
    pub fn new(age: u32, sex: Sex, delta_months: i32) -> Result<Self> {
        check_age(age)?;
        check_delta(delta_months)?;
        Ok(Self {
            age,
            sex,
            delta_months,
        })
    }

    pub fn age(&self) -> u32 {
        self.age
    }

    pub fn sex(&self) -> Sex {
        self.sex
    }

    pub fn delta_months(&self) -> i32 {
        self.delta_months
    }

    pub fn with_delta(&self, delta_months: i32) -> Result<Self> {
        Self::new(self.age, self.sex, delta_months)
    }
}

fn check_age(age: u32) -> Result<()> {
    if age > MAX_AGE {
        return Err(Error::Range {
            field: "age",
            value: age as i64,
            min: 0,
            max: MAX_AGE as i64,
        });
    }
    Ok(())
}

fn check_delta(delta: i32) -> Result<()> {
    if delta.abs() > MAX_DELTA_MONTHS {
        return Err(Error::Range {
            field: "delta_months",
            value: delta as i64,
            min: -(MAX_DELTA_MONTHS as i64),
            max: MAX_DELTA_MONTHS as i64,
        });
    }
    Ok(())
}

pub type Slot = [u8; SLOT_WIDTH];

pub fn encode_interval(delta_months: i32) -> Result<Slot> {
    check_delta(delta_months)?;
    let zeros = (50 + delta_months) as usize;
    let mut v = [1u8; SLOT_WIDTH];
    v[..zeros].fill(0);
    Ok(v)
}

pub fn encode_age(age: u32) -> Result<Slot> {
    check_age(age)?;
    let mut v = [0u8; SLOT_WIDTH];
    v[..age as usize].fill(1);
    Ok(v)
}

pub fn encode_sex(sex: Sex) -> Slot {
    match sex {
        Sex::Male => [0; SLOT_WIDTH],
        Sex::Female => [1; SLOT_WIDTH],
    }
}

/// Encoded condition, kept alongside the raw values it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionVector {
    pub condition: ClinicalCondition,
    pub age: Slot,
    pub sex: Slot,
    pub interval: Slot,
}

impl ConditionVector {
    /// `[age | sex | interval]`, 300 entries.
    pub fn concatenated(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CONDITION_WIDTH);
        out.extend_from_slice(&self.age);
        out.extend_from_slice(&self.sex);
        out.extend_from_slice(&self.interval);
        out
    }

    /// Row tensor `[1, 300]`, with masked attribute blocks zeroed.
    pub fn to_tensor<T: Real>(&self, mask: ConditionMask) -> Tensor<T> {
        let mut flat = self.concatenated();
        if !mask.age {
            flat[..SLOT_WIDTH].fill(0);
        }
        if !mask.sex {
            flat[SLOT_WIDTH..2 * SLOT_WIDTH].fill(0);
        }
        let data = flat
            .into_iter()
            .map(|b| if b == 1 { T::one() } else { T::zero() })
            .collect();
        Tensor::new(vec![1, CONDITION_WIDTH], data).expect("fixed width")
    }
}

/// Which covariates reach the network; the interval always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionMask {
    pub age: bool,
    pub sex: bool,
}

impl Default for ConditionMask {
    fn default() -> Self {
        Self {
            age: true,
            sex: true,
        }
    }
}

pub fn encode_condition(condition: &ClinicalCondition) -> Result<ConditionVector> {
    Ok(ConditionVector {
        condition: *condition,
        age: encode_age(condition.age)?,
        sex: encode_sex(condition.sex),
        interval: encode_interval(condition.delta_months)?,
    })
}
