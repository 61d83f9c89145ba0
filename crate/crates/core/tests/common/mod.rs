//! Small four-task config over real data for integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rsn2::experiment::data_root;

/// Groups `[digit, fashion]`, `[boston]`, `[shirts]`. Forgetting rows:
/// 2 + 3 + 4 = 9.
pub const MINI: &str = r#"
name = "mini"
seed = 11
schedule = [["digit", "fashion"], ["boston"], ["shirts"]]

[optimizer]
kind = "adam"
learning_rate = 0.002

[early_stop]
patience = 2
max_epochs = 2

[[tasks]]
name = "digit"
loss = "categorical_cross_entropy"
keep_fraction = 0.25
batch_size = 64
data = { kind = "idx", dir = "mnist", classes = [0, 1], max_train = 400, max_test = 200 }

[[tasks]]
name = "fashion"
loss = "categorical_cross_entropy"
keep_fraction = 0.25
batch_size = 64
data = { kind = "idx", dir = "fashion", classes = [1, 9], max_train = 400, max_test = 200 }

[[tasks]]
name = "boston"
loss = "mean_squared_error"
keep_fraction = 0.25
batch_size = 32
data = { kind = "csv_regression", dir = "boston" }

[[tasks]]
name = "shirts"
loss = "categorical_cross_entropy"
keep_fraction = 0.25
batch_size = 64
data = { kind = "idx", dir = "fashion", classes = [0, 6], max_train = 400, max_test = 200 }

[[layers]]
kind = "dense"
units = 784
activation = "relu"
tasks = ["boston"]

[[layers]]
kind = "dense"
units = 16
activation = "relu"

[[layers]]
kind = "dense"
units = 2
activation = "softmax"
tasks = ["digit", "fashion", "shirts"]

[[layers]]
kind = "dense"
units = 1
activation = "identity"
tasks = ["boston"]
"#;

pub fn root() -> PathBuf {
    data_root()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("mini.toml");
    std::fs::write(&p, text).unwrap();
    p
}
