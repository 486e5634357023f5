//! Flat `key = value` run configuration shared by every subcommand.
//!
//! Precedence, highest first: command-line flags, the `--config` file, the
//! `PHYSIO_FORGE_SEED` environment variable (seed only), built-in defaults.

use std::path::{Path, PathBuf};

use physio_forge::record::{Record, RecordWriter};
use physio_forge::synthbench::BenchmarkSpec;
use physio_forge::trainer::TrainConfig;
use physio_forge::{Error, Result};

pub const SEED_ENV: &str = "PHYSIO_FORGE_SEED";
pub const RESOLVED_NAME: &str = "run.cfg";

/// Benchmark generation knobs. Domains are the built-in defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchParams {
    pub per_class: usize,
    pub train_fraction: f64,
    pub regions: usize,
    pub frames: usize,
    pub voices_per_octave: usize,
    pub min_freq: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        let d = BenchmarkSpec::default_with_seed(0);
        Self {
            per_class: d.per_class,
            train_fraction: d.train_fraction,
            regions: d.regions,
            frames: d.frames,
            voices_per_octave: d.voices_per_octave,
            min_freq: d.min_freq,
        }
    }
}

impl BenchParams {
    pub fn spec(&self, seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            per_class: self.per_class,
            train_fraction: self.train_fraction,
            regions: self.regions,
            frames: self.frames,
            voices_per_octave: self.voices_per_octave,
            min_freq: self.min_freq,
            ..BenchmarkSpec::default_with_seed(seed)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub bench: BenchParams,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub spoof_checkpoint: Option<PathBuf>,
    pub forgery_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, then the environment seed, then `file` if given.
    pub fn load(file: Option<&Path>, env_seed: Option<&str>) -> Result<Self> {
        let env_seed = env_seed
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer")))
            })
            .transpose()?;
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })?;
                Self::parse(&text, path, env_seed)?
            }
            None => RunConfig::default(),
        };
        if file.is_none() {
            cfg.train.seed = env_seed.unwrap_or(0);
        }
        Ok(cfg)
    }

    /// Parses a configuration text; `seed` falls back to `env_seed`.
    pub fn parse(text: &str, origin: &Path, env_seed: Option<u64>) -> Result<Self> {
        let mut rec = Record::parse(text, origin)?;
        let seed = rec.take::<u64>("seed")?;
        let mut train = TrainConfig::take_from(&mut rec)?;
        train.seed = seed.or(env_seed).unwrap_or(0);
        let d = BenchParams::default();
        let bench = BenchParams {
            per_class: rec.take_or("per_class", d.per_class)?,
            train_fraction: rec.take_or("train_fraction", d.train_fraction)?,
            regions: rec.take_or("regions", d.regions)?,
            frames: rec.take_or("frames", d.frames)?,
            voices_per_octave: rec.take_or("voices_per_octave", d.voices_per_octave)?,
            min_freq: rec.take_or("min_freq", d.min_freq)?,
        };
        let cfg = RunConfig {
            train,
            bench,
            data: rec.take("data")?,
            out: rec.take("out")?,
            checkpoint: rec.take("checkpoint")?,
            spoof_checkpoint: rec.take("spoof_checkpoint")?,
            forgery_checkpoint: rec.take("forgery_checkpoint")?,
        };
        rec.finish()?;
        Ok(cfg)
    }

    /// Every key with its resolved value; unset paths are omitted.
    pub fn to_text(&self) -> String {
        let mut w = RecordWriter::new();
        for (key, path) in [
            ("data", &self.data),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("spoof_checkpoint", &self.spoof_checkpoint),
            ("forgery_checkpoint", &self.forgery_checkpoint),
        ] {
            if let Some(p) = path {
                w.put(key, p.display());
            }
        }
        self.train.write_record(&mut w);
        let b = &self.bench;
        w.put("per_class", b.per_class)
            .put("train_fraction", b.train_fraction)
            .put("regions", b.regions)
            .put("frames", b.frames)
            .put("voices_per_octave", b.voices_per_octave)
            .put("min_freq", b.min_freq);
        w.finish()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.bench.spec(self.train.seed).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.schedule.batch_size, 64);
        assert_eq!(c.train.epochs, 30);
        assert_eq!((c.train.lr_decay_factor, c.train.lr_decay_epoch), (0.1, 20));
        assert_eq!(c.train.model.arch.theta, 0.8);
        assert_eq!((c.train.model.arch.alpha, c.train.model.arch.beta), (0.5, 0.5));
        assert_eq!(
            (c.bench.regions, c.bench.frames, c.bench.voices_per_octave),
            (6, 300, 48)
        );
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.train.seed = 11;
        c.bench.per_class = 7;
        c.data = Some("bench".into());
        let text = c.to_text();
        assert!(text.contains("theta = 0.8\n"));
        let back = RunConfig::parse(&text, Path::new("x"), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("thetta = 0.5\n", Path::new("f.cfg"), None).unwrap_err();
        assert!(err.to_string().contains("thetta"), "{err}");
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(RunConfig::parse("", Path::new("f"), Some(5)).unwrap().train.seed, 5);
        assert_eq!(
            RunConfig::parse("seed = 2\n", Path::new("f"), Some(5))
                .unwrap()
                .train
                .seed,
            2
        );
        assert_eq!(RunConfig::load(None, Some("9")).unwrap().train.seed, 9);
        assert!(RunConfig::load(None, Some("nine")).is_err());
    }
}
