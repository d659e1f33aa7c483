use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{object_index, Dataset, Lighting};
use crate::error::{invalid, Error, Result};
use crate::rng::substream;

/// How to carve a test set out of a dataset.
///
/// `row_random` is an i.i.d. split keeping `floor(ratio * n)` rows for
/// training. The factor modes hold out every instance with the given
/// position, rotation, lighting, or object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "held_out", rename_all = "snake_case")]
pub enum SplitMode {
    RowRandom(f64),
    Position(u8),
    Rotation(u8),
    Lighting(Lighting),
    Object(String),
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitMode::RowRandom(r) => write!(f, "row_random:{r}"),
            SplitMode::Position(p) => write!(f, "position:{p}"),
            SplitMode::Rotation(r) => write!(f, "rotation:{r}"),
            SplitMode::Lighting(l) => write!(f, "lighting:{l}"),
            SplitMode::Object(o) => write!(f, "object:{o}"),
        }
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, arg) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("split '{s}' must look like mode:value")))?;
        let index = |a: &str| -> Result<u8> {
            a.parse::<u8>()
                .ok()
                .filter(|v| *v <= 2)
                .ok_or_else(|| invalid(format!("held-out index '{a}' must be 0, 1 or 2")))
        };
        match mode {
            "row_random" => {
                let r: f64 = arg
                    .parse()
                    .map_err(|_| invalid(format!("bad train ratio '{arg}'")))?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(invalid(format!("train ratio {r} must be in (0, 1)")));
                }
                Ok(SplitMode::RowRandom(r))
            }
            "position" => Ok(SplitMode::Position(index(arg)?)),
            "rotation" => Ok(SplitMode::Rotation(index(arg)?)),
            "lighting" => Lighting::from_name(arg)
                .map(SplitMode::Lighting)
                .ok_or_else(|| invalid(format!("unknown lighting '{arg}'"))),
            "object" => {
                if object_index(arg).is_none() {
                    return Err(invalid(format!("unknown object '{arg}'")));
                }
                Ok(SplitMode::Object(arg.to_string()))
            }
            other => Err(invalid(format!("unknown split mode '{other}'"))),
        }
    }
}

/// Train/test row indices into the source dataset, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(dataset: &Dataset, mode: &SplitMode, seed: u64) -> Result<Split> {
    let n = dataset.len();
    if let SplitMode::RowRandom(ratio) = mode {
        if !(*ratio > 0.0 && *ratio < 1.0) {
            return Err(invalid(format!("train ratio {ratio} must be in (0, 1)")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(seed, "split/row_random"));
        let n_train = (ratio * n as f64).floor() as usize;
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        return Ok(Split { train, test });
    }

    let held_out = |i: usize| {
        let inst = &dataset.instances()[i];
        match mode {
            SplitMode::Position(p) => inst.condition.position == *p,
            SplitMode::Rotation(r) => inst.condition.rotation == *r,
            SplitMode::Lighting(l) => inst.condition.lighting == *l,
            SplitMode::Object(o) => inst.object_id == *o,
            SplitMode::RowRandom(_) => unreachable!(),
        }
    };
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| held_out(i));
    if test.is_empty() {
        return Err(invalid(format!("held-out value for {mode} does not occur in the dataset")));
    }
    Ok(Split { train, test })
}
