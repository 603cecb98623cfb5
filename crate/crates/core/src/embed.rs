//! Text → embedding extraction.
//!
//! Two modes share one interface. `Mock` hashes tokens into a fixed random
//! projection and needs no network. `Remote` first asks a summarisation
//! service to condense the text under an analyst prompt, then embeds the
//! summary with the same mock encoder. Results can be cached on disk, keyed
//! by a content hash.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CompanyRecord, Exchange};
use crate::error::{Error, Result};

/// Environment variable naming the embedding cache directory.
pub const CACHE_DIR_ENV: &str = "SEQBELIEF_CACHE_DIR";

pub const DEFAULT_D_EMB: usize = 768;

/// Analyst summarisation prompt; `{max_words}` is substituted at request time.
pub const SUMMARY_PROMPT: &str = "Assume you are an investment analysis expert. Please summarize the given private \
company's expert call content from the following perspectives in no more than {max_words} words: Startup \
Characteristics (Product, Financial Health, Founding Team, Leadership, Intellectual Property); Market and Industry \
Dynamics (Market Size, Competitive Landscape, Economic and Regulatory Environment); Investor Characteristics (VC \
Expertise, Investment Strategy, Governance Role); Buyer Characteristics (Strategic Fit, Buyer's reputation for \
successful cultural and operational integration); Relationships Between Factors. If there is no description \
associated with the above feature, output the None value.";

const MOCK_SEED: u64 = 0x5eb0_e11e_f0c0_ffee;
const HASH_BUCKETS: u64 = 1 << 20;
const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub mode: EmbedMode,
    pub d_emb: usize,
    pub remote_endpoint: Option<String>,
    pub prompt_template: String,
    pub max_summary_words: usize,
    pub request_timeout_ms: u64,
    /// Base delay before the first retry; doubles on each further retry.
    pub retry_backoff_ms: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            mode: EmbedMode::Mock,
            d_emb: DEFAULT_D_EMB,
            remote_endpoint: None,
            prompt_template: SUMMARY_PROMPT.to_string(),
            max_summary_words: 200,
            request_timeout_ms: 30_000,
            retry_backoff_ms: 250,
            cache_dir: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb < 8 {
            return Err(Error::invalid(format!("d_emb must be at least 8, got {}", self.d_emb)));
        }
        if self.mode == EmbedMode::Remote && self.remote_endpoint.is_none() {
            return Err(Error::invalid("remote embedding mode requires an endpoint"));
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        self.prompt_template
            .replace("{max_words}", &self.max_summary_words.to_string())
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn hash_u64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Deterministic unit-norm embedding of `text`.
///
/// Each token is hashed into one of 2^20 buckets; every bucket owns a fixed
/// Gaussian column of the projection matrix. Empty or token-free text maps to
/// the first basis vector.
pub fn mock_embed(text: &str, d_emb: usize) -> Result<Vec<f64>> {
    if d_emb < 8 {
        return Err(Error::invalid(format!("d_emb must be at least 8, got {d_emb}")));
    }
    let mut v = vec![0.0; d_emb];
    for tok in tokens(text) {
        let bucket = hash_u64(tok.as_bytes()) % HASH_BUCKETS;
        let mut rng = ChaCha8Rng::seed_from_u64(MOCK_SEED ^ bucket);
        for x in v.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += z;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; d_emb];
        e[0] = 1.0;
        return Ok(e);
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    d_emb: usize,
    embedding: Vec<f64>,
}

#[derive(Serialize)]
struct SummaryRequest<'a> {
    prompt: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct SummaryResponse {
    summary: String,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Embedding front end with optional on-disk cache.
pub struct Embedder {
    cfg: EmbedderConfig,
    prompt: String,
    agent: Option<ureq::Agent>,
}

impl Embedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = (cfg.mode == EmbedMode::Remote).then(|| {
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(cfg.request_timeout_ms)))
                .build()
                .into()
        });
        if let Some(dir) = &cfg.cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            prompt: cfg.prompt(),
            cfg,
            agent,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    fn cache_path(&self, text: &str) -> Option<PathBuf> {
        let dir = self.cfg.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(format!("{:?}\0{}\0", self.cfg.mode, self.cfg.d_emb));
        if self.cfg.mode == EmbedMode::Remote {
            h.update(self.prompt.as_bytes());
            h.update([0u8]);
        }
        h.update(text.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn read_cache(&self, path: &Path) -> Option<Vec<f64>> {
        let bytes = std::fs::read(path).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        let ok = entry.d_emb == self.cfg.d_emb
            && entry.embedding.len() == self.cfg.d_emb
            && entry.embedding.iter().all(|v| v.is_finite());
        if !ok {
            log::warn!("discarding corrupt cache entry {}", path.display());
        }
        ok.then_some(entry.embedding)
    }

    fn write_cache(&self, path: &Path, embedding: &[f64]) {
        let entry = CacheEntry {
            d_emb: self.cfg.d_emb,
            embedding: embedding.to_vec(),
        };
        let Ok(bytes) = serde_json::to_vec(&entry) else { return };
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("{}.{n}.tmp", std::process::id()));
        if std::fs::write(&tmp, bytes).is_ok() && std::fs::rename(&tmp, path).is_ok() {
            return;
        }
        let _ = std::fs::remove_file(&tmp);
        log::warn!("could not write cache entry {}", path.display());
    }

    fn summarize(&self, text: &str, index: usize) -> Result<String> {
        let agent = self.agent.as_ref().expect("remote mode has an agent");
        let url = self.cfg.remote_endpoint.as_deref().expect("validated");
        let body = SummaryRequest {
            prompt: &self.prompt,
            text,
        };
        let mut last_err = String::new();
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms << (attempt - 1)));
            }
            match agent.post(url).send_json(&body) {
                Ok(mut resp) => match resp.body_mut().read_json::<SummaryResponse>() {
                    Ok(r) => return Ok(r.summary),
                    Err(e) => last_err = format!("bad response body: {e}"),
                },
                Err(e) => last_err = e.to_string(),
            }
            log::debug!("summarize attempt {} for exchange {index} failed: {last_err}", attempt + 1);
        }
        Err(Error::Remote {
            index,
            message: format!("gave up after {} attempts: {last_err}", MAX_RETRIES + 1),
        })
    }

    /// Embed one text; `index` identifies the exchange in error messages.
    pub fn embed_text(&self, text: &str, index: usize) -> Result<Vec<f64>> {
        let cache = self.cache_path(text);
        if let Some(hit) = cache.as_deref().and_then(|p| self.read_cache(p)) {
            return Ok(hit);
        }
        let emb = match self.cfg.mode {
            EmbedMode::Mock => mock_embed(text, self.cfg.d_emb)?,
            EmbedMode::Remote => mock_embed(&self.summarize(text, index)?, self.cfg.d_emb)?,
        };
        if let Some(p) = cache {
            self.write_cache(&p, &emb);
        }
        Ok(emb)
    }

    /// Fill in whichever side of the exchange lacks an embedding.
    pub fn llm_extract(&self, exchange: &Exchange, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let side = |emb: &Option<Vec<f64>>, text: &Option<String>| -> Result<Vec<f64>> {
            match (emb, text) {
                (Some(e), _) => Ok(e.clone()),
                (None, Some(t)) => self.embed_text(t, index),
                (None, None) => Err(Error::invalid(format!("exchange {index} has neither text nor embedding"))),
            }
        };
        Ok((
            side(&exchange.q_emb, &exchange.question_text)?,
            side(&exchange.a_emb, &exchange.answer_text)?,
        ))
    }

    pub fn embed_record(&self, record: &mut CompanyRecord) -> Result<()> {
        let mut index = 0;
        for call in &mut record.calls {
            for x in &mut call.exchanges {
                if !x.is_embedded() {
                    let (q, a) = self.llm_extract(x, index).map_err(|e| match e {
                        Error::Remote { index, message } => Error::Remote {
                            index,
                            message: format!("company {}: {message}", record.company_id),
                        },
                        other => other,
                    })?;
                    x.q_emb = Some(q);
                    x.a_emb = Some(a);
                }
                index += 1;
            }
        }
        Ok(())
    }

    /// Embed every record in parallel; order is preserved.
    pub fn embed_dataset(&self, records: &mut [CompanyRecord]) -> Result<()> {
        records.par_iter_mut().try_for_each(|r| self.embed_record(r))
    }
}
