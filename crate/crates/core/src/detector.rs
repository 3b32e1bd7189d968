//! Autoencoder anomaly detector trained on normal rows; the anomaly score is
//! the per-row mean squared reconstruction error.

use std::io::{BufRead, Write};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, parse_keyed, Activation, DenseNetwork, Loss, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 16,
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

/// `d -> hidden -> latent -> hidden -> d`, ReLU hidden layers, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub network: DenseNetwork,
    pub config: DetectorConfig,
    pub seed: u64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl AutoencoderModel {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// Mean squared reconstruction error of each row. Higher is more anomalous.
    pub fn anomaly_score(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        let reconstruction = self.network.predict(rows)?;
        Ok(neural::row_mse(rows, reconstruction.view()))
    }

    pub fn save(&self, mut out: impl Write) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(out, "autoencoder v1")?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "epochs {}", c.epochs)?;
        writeln!(out, "batch_size {}", c.batch_size)?;
        writeln!(out, "learning_rate {:?}", c.learning_rate)?;
        self.network.write_text(out)
    }

    pub fn load(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of autoencoder dump".into()))?
                .map_err(|e| Error::Format(e.to_string()))
        };
        if next()?.trim() != "autoencoder v1" {
            return Err(Error::Format("not an autoencoder dump".into()));
        }
        let seed = parse_keyed(&next()?, "seed")?;
        let epochs = parse_keyed(&next()?, "epochs")?;
        let batch_size = parse_keyed(&next()?, "batch_size")?;
        let learning_rate = parse_keyed(&next()?, "learning_rate")?;
        let network = DenseNetwork::read_from_lines(&mut lines)?;
        let layers = network.layers();
        if layers.len() != 4 || network.output_dim() != network.input_dim() {
            return Err(Error::Format(
                "autoencoder must have 4 mirrored layers".into(),
            ));
        }
        let config = DetectorConfig {
            hidden: layers[0].output_dim(),
            latent: layers[1].output_dim(),
            epochs,
            batch_size,
            learning_rate,
        };
        Ok(Self {
            network,
            config,
            seed,
            loss_history: Vec::new(),
        })
    }
}

/// Trains on `normal_rows` (already scaled to `[0, 1]`) with MSE and Adam.
pub fn train_detector(
    normal_rows: ArrayView2<f64>,
    config: &DetectorConfig,
    seed: u64,
) -> Result<AutoencoderModel> {
    if normal_rows.nrows() == 0 {
        return Err(Error::Empty("detector training rows"));
    }
    if normal_rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("detector training rows"));
    }
    let d = normal_rows.ncols();
    let mut network = DenseNetwork::init(
        &[d, config.hidden, config.latent, config.hidden, d],
        &[
            Activation::Relu,
            Activation::Relu,
            Activation::Relu,
            Activation::Sigmoid,
        ],
        seed,
    )?;
    let schedule = TrainSchedule {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
    };
    // Shuffling uses its own stream so it is independent of the initialization draws.
    let loss_history = neural::fit(
        &mut network,
        normal_rows,
        normal_rows,
        Loss::Mse,
        &schedule,
        crate::seed::derive(seed, &[0x5eed]),
    )?;
    Ok(AutoencoderModel {
        network,
        config: *config,
        seed,
        loss_history,
    })
}
