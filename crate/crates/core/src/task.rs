use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The downstream task of one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Segmentation,
    Detection,
    Classification,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Segmentation => "segmentation",
            TaskKind::Detection => "detection",
            TaskKind::Classification => "classification",
        }
    }

    /// Headline metric reported for the task.
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Segmentation => "mIoU",
            TaskKind::Detection => "mAP@50",
            TaskKind::Classification => "Top-1",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "segmentation" => Ok(TaskKind::Segmentation),
            "detection" => Ok(TaskKind::Detection),
            "classification" => Ok(TaskKind::Classification),
            other => Err(Error::Argument(format!("unknown task `{other}`"))),
        }
    }
}
