//! Offline datasets rolled out with a blended behavior policy.
//!
//! At every step the behavior policy draws `α ~ U(0, ν)` and executes
//! `(1 − α)·a★ + α·ã`, where `ã` comes from an independently seeded noise
//! network of the same architecture as the optimal policy.
//!
//! A dataset is a JSON manifest (`PREFIX.json`) next to a binary record
//! file (`PREFIX.bin`): the 8-byte magic `SMEDATA1`, a little-endian `u32`
//! record count, then packed records
//! `s, a, a_star, reward, r_step, tilde_r, s_next` as little-endian `f64`
//! followed by one flag byte (bit 0 terminated, bit 1 truncated).

use std::fs;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Fnv1a64};
use crate::config::EnvConfig;
use crate::env::Environment;
use crate::error::{ensure_len, Error, Result};
use crate::fileio::write_atomic;
use crate::policy::DunPolicy;
use crate::reward::mean_abs_error;
use crate::rng::{RandomStream, StreamId};
use crate::stats::RunningStats;

pub const DATASET_MAGIC: [u8; 8] = *b"SMEDATA1";
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 12;
pub const RECORD_LAYOUT: &str =
    "s[n_state] a[n_action] a_star[n_action] reward r_step tilde_r s_next[n_state] as f64le; flags u8 (bit0 terminated, bit1 truncated)";

/// Noise levels of the reference dataset grid.
pub const NOISE_GRID: [f64; 5] = [0.0, 0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    optimal: Arc<DunPolicy>,
    noise: DunPolicy,
    max_noise: f64,
    alpha_stream: RandomStream,
}

/// One behavior decision with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSample {
    pub action: Vec<f64>,
    pub a_star: Vec<f64>,
    pub noise_action: Vec<f64>,
    pub alpha: f64,
}

impl BehaviorPolicy {
    /// Noise network from stream 5 and `α` draws from stream 6 of the
    /// environment's master seed.
    pub fn new(env: &Environment, max_noise: f64) -> Result<Self> {
        let cfg = env.config();
        let noise = DunPolicy::build(cfg, &mut RandomStream::derive(cfg.master_seed, StreamId::NoisePolicy));
        Self::from_parts(
            env.shared_policy(),
            noise,
            max_noise,
            RandomStream::derive(cfg.master_seed, StreamId::BehaviorAlpha),
        )
    }

    pub fn from_parts(
        optimal: Arc<DunPolicy>,
        noise: DunPolicy,
        max_noise: f64,
        alpha_stream: RandomStream,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&max_noise) {
            return Err(Error::InvalidArgument(format!(
                "max noise must lie in [0,1], got {max_noise}"
            )));
        }
        ensure_len("noise policy input", optimal.input_dim(), noise.input_dim())?;
        ensure_len("noise policy output", optimal.output_dim(), noise.output_dim())?;
        Ok(Self {
            optimal,
            noise,
            max_noise,
            alpha_stream,
        })
    }

    pub fn max_noise(&self) -> f64 {
        self.max_noise
    }

    pub fn noise_policy(&self) -> &DunPolicy {
        &self.noise
    }

    pub fn sample(&mut self, s: &[f64]) -> Result<BehaviorSample> {
        let a_star = self.optimal.act(s)?;
        let noise_action = self.noise.act(s)?;
        let alpha = self.max_noise * self.alpha_stream.uniform();
        let action = a_star
            .iter()
            .zip(&noise_action)
            .map(|(o, n)| (1.0 - alpha) * o + alpha * n)
            .collect();
        Ok(BehaviorSample {
            action,
            a_star,
            noise_action,
            alpha,
        })
    }

    pub fn behavior_action(&mut self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sample(s)?.action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub a_star: Vec<f64>,
    /// Distributed payout.
    pub reward: f64,
    pub r_step: f64,
    pub tilde_r: f64,
    pub s_next: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

impl TransitionRecord {
    pub fn flags(&self) -> u8 {
        u8::from(self.terminated) | (u8::from(self.truncated) << 1)
    }

    /// `tilde_r` recomputed from the stored actions.
    pub fn recomputed_tilde_r(&self) -> Result<f64> {
        Ok(1.0 - mean_abs_error(&self.a, &self.a_star)?)
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        for block in [&self.s, &self.a, &self.a_star] {
            block.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for v in [self.reward, self.r_step, self.tilde_r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        self.s_next
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.push(self.flags());
    }

    fn decode(bytes: &[u8], n_state: usize, n_action: usize) -> Self {
        let mut floats = bytes[..bytes.len() - 1]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |n: usize| (&mut floats).take(n).collect::<Vec<f64>>();
        let s = take(n_state);
        let a = take(n_action);
        let a_star = take(n_action);
        let scalars = take(3);
        let s_next = take(n_state);
        let flags = bytes[bytes.len() - 1];
        Self {
            s,
            a,
            a_star,
            reward: scalars[0],
            r_step: scalars[1],
            tilde_r: scalars[2],
            s_next,
            terminated: flags & 1 != 0,
            truncated: flags & 2 != 0,
        }
    }
}

pub fn record_bytes(n_state: usize, n_action: usize) -> usize {
    8 * (2 * n_state + 2 * n_action + 3) + 1
}

/// Destination for collected transitions.
pub trait DatasetSink {
    fn push(&mut self, record: &TransitionRecord) -> Result<()>;
}

impl DatasetSink for Vec<TransitionRecord> {
    fn push(&mut self, record: &TransitionRecord) -> Result<()> {
        Vec::push(self, record.clone());
        Ok(())
    }
}

/// Streaming writer for the binary record file. The record count in the
/// header is patched in by [`DatasetWriter::finish`].
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    n_state: usize,
    n_action: usize,
    count: u64,
    hash: Fnv1a64,
    buf: Vec<u8>,
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W, n_state: usize, n_action: usize) -> Result<Self> {
        inner.write_all(&DATASET_MAGIC)?;
        inner.write_all(&0u32.to_le_bytes())?;
        Ok(Self {
            inner,
            n_state,
            n_action,
            count: 0,
            hash: Fnv1a64::default(),
            buf: Vec::with_capacity(record_bytes(n_state, n_action)),
        })
    }

    pub fn write_record(&mut self, record: &TransitionRecord) -> Result<()> {
        ensure_len("record s", self.n_state, record.s.len())?;
        ensure_len("record s_next", self.n_state, record.s_next.len())?;
        ensure_len("record a", self.n_action, record.a.len())?;
        ensure_len("record a_star", self.n_action, record.a_star.len())?;
        if self.count == u64::from(u32::MAX) {
            return Err(Error::Layout("record count exceeds u32".into()));
        }
        self.buf.clear();
        record.encode_into(&mut self.buf);
        self.hash.update(&self.buf);
        self.inner.write_all(&self.buf)?;
        self.count += 1;
        Ok(())
    }

    /// Patch the header and return `(record_count, checksum, inner)`.
    pub fn finish(mut self) -> Result<(u64, u64, W)> {
        self.inner.seek(SeekFrom::Start(8))?;
        self.inner.write_all(&(self.count as u32).to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok((self.count, self.hash.finish(), self.inner))
    }
}

impl<W: Write + Seek> DatasetSink for DatasetWriter<W> {
    fn push(&mut self, record: &TransitionRecord) -> Result<()> {
        self.write_record(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub config: EnvConfig,
    pub max_noise: f64,
    pub n_transitions: u64,
    pub n_episodes: u64,
    pub mean_tilde_r: f64,
    pub mean_step_reward: f64,
}

/// Roll out `bp` until `n_transitions` records have been pushed into
/// `sink`, resetting whenever an episode ends.
///
/// Payouts are logged with a reward interval of 1 regardless of the
/// environment's own interval, so `reward == r_step` for every record.
pub fn collect_dataset<S: DatasetSink>(
    env: &Environment,
    bp: &mut BehaviorPolicy,
    n_transitions: u64,
    sink: &mut S,
) -> Result<DatasetSummary> {
    if n_transitions == 0 {
        return Err(Error::InvalidArgument("n_transitions must be ≥ 1".into()));
    }
    let mut logging_cfg = *env.config();
    logging_cfg.reward_interval = 1;
    let mut rollout_env = Environment::from_parts(logging_cfg, env.kernel().clone(), env.policy().clone())?
        .with_payout_on_termination(env.payout_on_termination());

    let n_state = logging_cfg.n_state;
    let mut tilde = RunningStats::default();
    let mut step_reward = RunningStats::default();
    let mut n_episodes = 0u64;
    let mut written = 0u64;
    while written < n_transitions {
        let mut obs = rollout_env.reset(None);
        n_episodes += 1;
        loop {
            let action = bp.behavior_action(&obs[..n_state])?;
            let step = rollout_env.step(&action)?;
            let record = TransitionRecord {
                s: step.info.state,
                a: step.info.action,
                a_star: step.info.a_star,
                reward: step.reward,
                r_step: step.info.r,
                tilde_r: step.info.tilde_r,
                s_next: step.observation[..n_state].to_vec(),
                terminated: step.terminated,
                truncated: step.truncated,
            };
            sink.push(&record)?;
            tilde.push(record.tilde_r);
            step_reward.push(record.r_step);
            written += 1;
            if written == n_transitions || step.terminated || step.truncated {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(DatasetSummary {
        config: *env.config(),
        max_noise: bp.max_noise(),
        n_transitions: written,
        n_episodes,
        mean_tilde_r: tilde.mean(),
        mean_step_reward: step_reward.mean(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: EnvConfig,
    pub max_noise: f64,
    pub n_transitions: u64,
    pub n_episodes: u64,
    pub logged_reward_interval: usize,
    pub n_state: usize,
    pub n_action: usize,
    pub record_bytes: usize,
    pub record_layout: String,
    pub records_file: String,
    pub checksum: String,
    pub mean_tilde_r: f64,
    pub mean_step_reward: f64,
}

impl DatasetManifest {
    fn new(summary: &DatasetSummary, records_file: String, checksum: u64) -> Self {
        let cfg = summary.config;
        Self {
            format_version: DATASET_FORMAT_VERSION,
            config: cfg,
            max_noise: summary.max_noise,
            n_transitions: summary.n_transitions,
            n_episodes: summary.n_episodes,
            logged_reward_interval: 1,
            n_state: cfg.n_state,
            n_action: cfg.n_action,
            record_bytes: record_bytes(cfg.n_state, cfg.n_action),
            record_layout: RECORD_LAYOUT.to_string(),
            records_file,
            checksum: codec::format_checksum(checksum),
            mean_tilde_r: summary.mean_tilde_r,
            mean_step_reward: summary.mean_step_reward,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Manifest("missing format_version".into()))?;
        if found != u64::from(DATASET_FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: DATASET_FORMAT_VERSION,
                found: found as u32,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Paths `(PREFIX.json, PREFIX.bin)`.
pub fn dataset_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with_ext = |ext: &str| {
        let mut name = prefix.as_os_str().to_os_string();
        name.push(ext);
        PathBuf::from(name)
    };
    (with_ext(".json"), with_ext(".bin"))
}

/// Encode records into the binary file format.
pub fn encode_records(
    records: &[TransitionRecord],
    n_state: usize,
    n_action: usize,
) -> Result<(Vec<u8>, u64)> {
    let mut writer = DatasetWriter::new(std::io::Cursor::new(Vec::new()), n_state, n_action)?;
    for r in records {
        writer.write_record(r)?;
    }
    let (_, checksum, cursor) = writer.finish()?;
    Ok((cursor.into_inner(), checksum))
}

/// Decode a binary record file, checking it against the manifest.
pub fn decode_records(bytes: &[u8], manifest: &DatasetManifest) -> Result<Vec<TransitionRecord>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Layout(format!(
            "file of {} bytes is shorter than the {HEADER_BYTES}-byte header",
            bytes.len()
        )));
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let count = u64::from(u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")));
    if count != manifest.n_transitions {
        return Err(Error::Layout(format!(
            "header holds {count} records but manifest declares {}",
            manifest.n_transitions
        )));
    }
    let rs = record_bytes(manifest.n_state, manifest.n_action);
    if manifest.record_bytes != rs {
        return Err(Error::Layout(format!(
            "manifest record_bytes {} disagrees with n_state={} n_action={} ({rs})",
            manifest.record_bytes, manifest.n_state, manifest.n_action
        )));
    }
    let body = &bytes[HEADER_BYTES..];
    let expected = count as usize * rs;
    if body.len() != expected {
        if count > 0 && body.len().is_multiple_of(count as usize) {
            return Err(Error::Layout(format!(
                "records are {} bytes each but manifest dimensions imply {rs}",
                body.len() / count as usize
            )));
        }
        if body.len() < expected {
            return Err(Error::Truncated {
                record_index: (body.len() / rs) as u64,
            });
        }
        return Err(Error::Layout(format!(
            "{} trailing bytes after the last record",
            body.len() - expected
        )));
    }
    let computed = codec::format_checksum(codec::fnv1a64(body));
    if !computed.eq_ignore_ascii_case(&manifest.checksum) {
        return Err(Error::ChecksumMismatch {
            block: "records".into(),
            stored: manifest.checksum.clone(),
            computed,
        });
    }
    Ok(body
        .chunks_exact(rs)
        .map(|c| TransitionRecord::decode(c, manifest.n_state, manifest.n_action))
        .collect())
}

fn records_file_name(prefix: &Path) -> String {
    let (_, bin) = dataset_paths(prefix);
    bin.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Write `records` and their manifest to `PREFIX.bin` / `PREFIX.json`.
pub fn write_dataset(
    prefix: &Path,
    summary: &DatasetSummary,
    records: &[TransitionRecord],
) -> Result<DatasetManifest> {
    let cfg = summary.config;
    ensure_len("record count", summary.n_transitions as usize, records.len())?;
    let (bytes, checksum) = encode_records(records, cfg.n_state, cfg.n_action)?;
    let manifest = DatasetManifest::new(summary, records_file_name(prefix), checksum);
    let (json_path, bin_path) = dataset_paths(prefix);
    write_atomic(&bin_path, &bytes)?;
    write_atomic(&json_path, manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}

/// Collect `n_transitions` records straight into `PREFIX.bin` and write the
/// manifest alongside.
pub fn generate_dataset(
    env: &Environment,
    bp: &mut BehaviorPolicy,
    n_transitions: u64,
    prefix: &Path,
) -> Result<DatasetManifest> {
    let (json_path, bin_path) = dataset_paths(prefix);
    let mut tmp_name = bin_path.as_os_str().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp_name);
    let file = fs::File::create(&tmp)?;
    let mut writer = DatasetWriter::new(BufWriter::new(file), env.config().n_state, env.config().n_action)?;
    let summary = collect_dataset(env, bp, n_transitions, &mut writer)?;
    let (_, checksum, inner) = writer.finish()?;
    inner
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .sync_all()?;
    fs::rename(&tmp, &bin_path)?;
    let manifest = DatasetManifest::new(&summary, records_file_name(prefix), checksum);
    write_atomic(&json_path, manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}

/// Read a dataset from its manifest path (`PREFIX.json`).
pub fn read_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<TransitionRecord>)> {
    let manifest = DatasetManifest::from_json(&fs::read_to_string(manifest_path)?)?;
    let bin = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.records_file);
    let mut bytes = Vec::new();
    fs::File::open(bin)?.read_to_end(&mut bytes)?;
    let records = decode_records(&bytes, &manifest)?;
    Ok((manifest, records))
}

/// Concatenate datasets collected from the same environment and noise
/// level into `out_prefix`.
pub fn concat_datasets(manifests: &[PathBuf], out_prefix: &Path) -> Result<DatasetManifest> {
    let mut parts = manifests.iter().map(|p| read_dataset(p));
    let (first, mut records) = parts
        .next()
        .ok_or_else(|| Error::InvalidArgument("no datasets to concatenate".into()))??;
    let mut n_episodes = first.n_episodes;
    for part in parts {
        let (m, r) = part?;
        if m.config != first.config || m.max_noise != first.max_noise {
            return Err(Error::Layout(
                "datasets differ in configuration or noise level".into(),
            ));
        }
        n_episodes += m.n_episodes;
        records.extend(r);
    }
    let tilde: RunningStats = records.iter().map(|r| r.tilde_r).collect();
    let step: RunningStats = records.iter().map(|r| r.r_step).collect();
    let summary = DatasetSummary {
        config: first.config,
        max_noise: first.max_noise,
        n_transitions: records.len() as u64,
        n_episodes,
        mean_tilde_r: tilde.mean(),
        mean_step_reward: step.mean(),
    };
    write_dataset(out_prefix, &summary, &records)
}
