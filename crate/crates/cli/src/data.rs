//! Locating and loading datasets for the command line.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use allqa::data::{load_boolq, load_squad, load_synthetic, mix_and_shuffle, Dataset, Split, Task};
use allqa::model::Regime;
use allqa::numerics::RngState;
use allqa::{Error, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Boolq,
    Squad,
    All,
}

impl TaskArg {
    pub fn regime(self) -> Regime {
        match self {
            TaskArg::Boolq => Regime::Boolean,
            TaskArg::Squad => Regime::Extractive,
            TaskArg::All => Regime::AllPurpose,
        }
    }

    pub fn task(self) -> Option<Task> {
        match self {
            TaskArg::Boolq => Some(Task::Boolean),
            TaskArg::Squad => Some(Task::Extractive),
            TaskArg::All => None,
        }
    }

    pub fn restrict(self, ds: Dataset) -> Dataset {
        match self.task() {
            Some(t) => ds.filter_task(t),
            None => ds,
        }
    }
}

impl<'de> Deserialize<'de> for TaskArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TaskArg::from_str(&s, true).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Boolq,
    Squad,
    Synthetic,
}

fn sniff(path: &Path) -> Result<Format> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(Format::Squad);
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        return if value.get("passage").is_some() {
            Ok(Format::Boolq)
        } else if value.get("task").is_some() {
            Ok(Format::Synthetic)
        } else {
            Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "neither a BoolQ nor a synthetic record".into(),
            })
        };
    }
    Err(Error::Usage(format!("{} holds no records", path.display())))
}

/// Loads one file, picking the reader from its extension and first record.
pub fn load_file(path: &Path, split: Split, max_seq_len: usize) -> Result<Dataset> {
    match sniff(path)? {
        Format::Boolq => load_boolq(path, split, max_seq_len),
        Format::Squad => load_squad(path, split, max_seq_len),
        Format::Synthetic => load_synthetic(path, split, max_seq_len),
    }
}

fn official(dir: &Path, task: Task, split: Split) -> PathBuf {
    match (task, split) {
        (Task::Boolean, Split::Train) => dir.join("boolq/train.jsonl"),
        (Task::Boolean, Split::Dev) => dir.join("boolq/dev.jsonl"),
        (Task::Extractive, Split::Train) => dir.join("squad/train-v2.0.json"),
        (Task::Extractive, Split::Dev) => dir.join("squad/dev-v2.0.json"),
    }
}

fn synthetic(dir: &Path, split: Split) -> PathBuf {
    dir.join(match split {
        Split::Train => "train.jsonl",
        Split::Dev => "dev.jsonl",
    })
}

/// The files that would be read for `task` and `split` under `dir`, or
/// `None` when nothing is there.
pub fn resolve(dir: &Path, task: TaskArg, split: Split) -> Option<Vec<PathBuf>> {
    let tasks: &[Task] = match task.task() {
        Some(Task::Boolean) => &[Task::Boolean],
        Some(Task::Extractive) => &[Task::Extractive],
        None => &[Task::Boolean, Task::Extractive],
    };
    let found: Vec<PathBuf> = tasks.iter().map(|&t| official(dir, t, split)).filter(|p| p.is_file()).collect();
    if found.len() == tasks.len() {
        return Some(found);
    }
    let fallback = synthetic(dir, split);
    fallback.is_file().then(|| vec![fallback])
}

/// Loads the `split` of `task` from a data directory. Official layouts are
/// `boolq/{train,dev}.jsonl` and `squad/{train,dev}-v2.0.json`; otherwise
/// `{train,dev}.jsonl` from the synthetic generator is used. `None` when no
/// file or no sample of `task` is found.
pub fn load_dir(dir: &Path, task: TaskArg, split: Split, max_seq_len: usize, seed: u64) -> Result<Option<Dataset>> {
    let Some(files) = resolve(dir, task, split) else {
        return Ok(None);
    };
    let mut sets = files
        .iter()
        .map(|p| load_file(p, split, max_seq_len).map(|d| task.restrict(d)))
        .collect::<Result<Vec<_>>>()?;
    let ds = if sets.len() == 2 {
        let b = sets.pop().unwrap();
        let a = sets.pop().unwrap();
        mix_and_shuffle(a, b, &RngState::new(seed))?
    } else {
        sets.pop().unwrap()
    };
    Ok((!ds.is_empty()).then_some(ds))
}
