/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

use thiserror::Error;

use crate::solver::DivergedRun;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} is zero after centering and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("embedding collapsed; delta = max c = {max_c}")]
    Collapsed { max_c: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(
        "solver diverged at iteration {}: loss {} exceeded 10x its minimum {}",
        .0.iteration, .0.loss, .0.min_loss
    )]
    Diverged(Box<DivergedRun>),

    #[error("covariance of component {component} is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPsd { component: usize, min_eigenvalue: f64 },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
