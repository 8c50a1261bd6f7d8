//! Dataset selection shared by the subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nyscluster::datagen::{read_csv, read_libsvm, Shape, SyntheticSpec};
use nyscluster::DataMatrix;
use serde::Serialize;
use serde_json::json;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// `.csv` means CSV, anything else LIBSVM.
    Auto,
    Csv,
    Libsvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeArg {
    Moons,
    Circles,
    Blobs,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Moons => Shape::Moons,
            ShapeArg::Circles => Shape::Circles,
            ShapeArg::Blobs => Shape::Blobs,
        }
    }
}

/// Either an input file or a synthetic generator.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    /// Data file (CSV with a `label` column, or LIBSVM).
    #[arg(long, conflicts_with = "shape")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub input_format: InputFormat,
    /// Generate a synthetic data set instead of reading a file.
    #[arg(long, value_enum)]
    pub shape: Option<ShapeArg>,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Synthetic noise level (blob stddev for blobs).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

pub struct Dataset {
    pub data: DataMatrix,
    /// Where the data came from, for the manifest.
    pub source: serde_json::Value,
    pub default_k: Option<usize>,
}

impl DatasetArgs {
    pub fn is_set(&self) -> bool {
        self.input.is_some() || self.shape.is_some()
    }

    /// `k` only matters for synthetic blobs.
    pub fn load(&self, k: Option<usize>) -> Result<Dataset, Failure> {
        if let Some(path) = &self.input {
            let data = read_input(path, self.input_format)?;
            let default_k = data.labels().and(data.num_classes());
            return Ok(Dataset {
                data,
                source: json!({ "path": path }),
                default_k,
            });
        }
        let Some(shape) = self.shape else {
            return Err(Failure::Usage(
                "give --input <PATH> or --shape <SHAPE>".into(),
            ));
        };
        let shape = Shape::from(shape);
        let mut spec = SyntheticSpec::new(shape, self.n, self.data_seed);
        if let Some(noise) = self.noise {
            spec = spec.with_noise(noise);
        }
        if let (Shape::Blobs, Some(k)) = (shape, k) {
            spec = spec.with_k(k);
        }
        let data = spec.generate()?;
        Ok(Dataset {
            data,
            source: json!({ "synthetic": spec }),
            default_k: Some(spec.k),
        })
    }
}

pub fn read_input(path: &Path, format: InputFormat) -> anyhow::Result<DataMatrix> {
    let csv = match format {
        InputFormat::Csv => true,
        InputFormat::Libsvm => false,
        InputFormat::Auto => path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    Ok(if csv {
        read_csv(path)
    } else {
        read_libsvm(path)
    }?)
}
