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

//! Near-isometric binary hashing: learn M sign hyperplanes so that scaled
//! Hamming distances track Euclidean distances with the smallest worst-case
//! error over all pairs.

pub mod baselines;
pub mod cli;
pub mod column_gen;
pub mod data_io;
pub mod error;
pub mod hashing;
pub mod metrics;
pub mod progress;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use hashing::{hash_codes, BinaryCodes, Dataset, HashModel, Preprocessing, SecantRef};
pub use solver::{train_nibh, SolverConfig};
