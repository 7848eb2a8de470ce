//! String-keyed hyperparameter maps stored alongside checkpoints.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Hparams = BTreeMap<String, String>;

pub fn get_parsed<T: FromStr>(h: &Hparams, key: &str) -> Result<T> {
    let raw = h
        .get(key)
        .ok_or_else(|| Error::Data(format!("missing hyperparameter {key}")))?;
    raw.parse()
        .map_err(|_| Error::Data(format!("hyperparameter {key}={raw} does not parse")))
}
