//! AWGN channel over transmitted node features, plus a Monte-Carlo check that mean readout
//! divides the channel noise variance by the node count.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Noiseless,
    Awgn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    #[serde(default = "infinite_snr", with = "snr_json")]
    pub snr_db: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn infinite_snr() -> f64 {
    f64::INFINITY
}

/// JSON has no infinity; a noiseless SNR is written as the string `"inf"`.
mod snr_json {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad SNR '{other}'"))),
            },
        }
    }
}

impl ChannelSpec {
    pub fn noiseless() -> Self {
        Self { kind: ChannelKind::Noiseless, snr_db: f64::INFINITY, rng_seed: 0 }
    }

    pub fn awgn(snr_db: f64, rng_seed: u64) -> Self {
        Self { kind: ChannelKind::Awgn, snr_db, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ChannelKind::Awgn && !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!("AWGN channel needs a finite SNR, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// Mean squared entry of the transmitted matrix.
pub fn signal_power(features: &Tensor) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("signal power of an empty matrix".into()));
    }
    Ok(features.data().iter().map(|v| v * v).sum::<f64>() / features.len() as f64)
}

/// Noise standard deviation that realizes `snr_db` for a signal of power `power`.
pub fn noise_sigma(power: f64, snr_db: f64) -> Result<f64> {
    if power == 0.0 {
        return Err(Error::ZeroPower);
    }
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(format!("signal power {power}")));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// The additive noise the channel would apply to `features`, or `None` when noiseless.
/// Draws `rows x cols` standard normals in row-major order, then scales by `sigma_n`.
pub fn sample_noise<R: Rng + ?Sized>(
    features: &Tensor,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<Option<Tensor>> {
    match spec.kind {
        ChannelKind::Noiseless => Ok(None),
        ChannelKind::Awgn => {
            spec.validate()?;
            let sigma = noise_sigma(signal_power(features)?, spec.snr_db)?;
            let data = (0..features.len())
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(Some(Tensor::from_vec(features.rows(), features.cols(), data)?))
        }
    }
}

/// Passes node features through the channel.
pub fn awgn_apply<R: Rng + ?Sized>(features: &Tensor, spec: &ChannelSpec, rng: &mut R) -> Result<Tensor> {
    if !features.all_finite() {
        return Err(Error::InvalidArgument("non-finite features entering the channel".into()));
    }
    let mut out = features.clone();
    if let Some(noise) = sample_noise(features, spec, rng)? {
        out.axpy(1.0, &noise);
    }
    Ok(out)
}

/// Empirical SNR (dB) after `applications` independent passes of `features` through an AWGN
/// channel at `snr_db`.
pub fn measure_snr(features: &Tensor, snr_db: f64, applications: usize, seed: u64) -> Result<f64> {
    let spec = ChannelSpec::awgn(snr_db, seed);
    let mut rng = rng_for(seed, "measure-snr");
    let power = signal_power(features)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..applications {
        let noisy = awgn_apply(features, &spec, &mut rng)?;
        for (y, x) in noisy.data().iter().zip(features.data()) {
            let n = y - x;
            sum += n;
            sum_sq += n * n;
        }
    }
    let count = (applications * features.len()) as f64;
    let mean = sum / count;
    let variance = sum_sq / count - mean * mean;
    Ok(10.0 * (power / variance).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReductionReport {
    pub nodes: usize,
    pub dim: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub channel_variance: f64,
    pub expected_readout_variance: f64,
    pub empirical_readout_variance: f64,
    pub relative_error: f64,
    pub passed: bool,
}

pub const MIN_NOISE_TRIALS: usize = 10_000;
pub const NOISE_REDUCTION_TOLERANCE: f64 = 0.05;

/// Monte-Carlo estimate of the variance of the mean-readout noise term for an `nodes x dim`
/// feature matrix transmitted at `snr_db`; passes within 5% of `sigma_n^2 / nodes`.
pub fn verify_readout_noise_reduction(
    nodes: usize,
    dim: usize,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<NoiseReductionReport> {
    if trials < MIN_NOISE_TRIALS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_NOISE_TRIALS} trials")));
    }
    if nodes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("empty feature matrix".into()));
    }
    let mut rng = rng_for(seed, "readout-noise-features");
    let features = Tensor::from_vec(nodes, dim, (0..nodes * dim).map(|_| rng.random::<f64>()).collect())?;
    let spec = ChannelSpec::awgn(snr_db, seed);
    let sigma = noise_sigma(signal_power(&features)?, snr_db)?;
    let mut rng = rng_for(seed, "readout-noise-draws");
    let mut sum_sq = 0.0;
    let mut column_mean = vec![0.0; dim];
    for _ in 0..trials {
        let noise = sample_noise(&features, &spec, &mut rng)?.expect("awgn channel");
        column_mean.fill(0.0);
        for i in 0..nodes {
            for (acc, v) in column_mean.iter_mut().zip(noise.row(i)) {
                *acc += v;
            }
        }
        sum_sq += column_mean.iter().map(|s| (s / nodes as f64).powi(2)).sum::<f64>();
    }
    let empirical = sum_sq / (trials * dim) as f64;
    let expected = sigma * sigma / nodes as f64;
    let relative_error = (empirical / expected - 1.0).abs();
    Ok(NoiseReductionReport {
        nodes,
        dim,
        snr_db,
        trials,
        channel_variance: sigma * sigma,
        expected_readout_variance: expected,
        empirical_readout_variance: empirical,
        relative_error,
        passed: relative_error <= NOISE_REDUCTION_TOLERANCE,
    })
}
