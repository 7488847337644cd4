//! Publication bundles: the full artifact of a retired suite.
//!
//! A bundle is a flat map of named files. `manifest.json` lists the SHA-256
//! of every other file and carries the commitment digest and salt;
//! `manifest.sig` is the server's signature over the manifest bytes. The
//! same map is written to disk as a directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::SchemaHeader;
use crate::domain::{
    mean_item_score, response_hash, run_scorer, ModelId, ParticipantId, Review, ScoreRecord,
    Stamp, StreamId, SuitePayload, TestId, TestSuite,
};
use crate::integrity::{
    sha256, verify, verify_canonical, verify_reveal, Digest, PublicKey, Salt, Signature,
    SigningIdentity,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SIG_FILE: &str = "manifest.sig";
const ITEMS_FILE: &str = "items.json";
const REVIEWS_FILE: &str = "reviews.json";
const SCORES_FILE: &str = "scores.json";
const BUNDLE_FORMAT: &str = "proctor.bundle";

fn response_file(model: &ModelId) -> String {
    format!("responses/{}.json", model.to_hex())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub schema: SchemaHeader,
    pub test_id: TestId,
    pub contributor: ParticipantId,
    pub stream: StreamId,
    pub digest: Digest,
    pub salt: Salt,
    pub item_count: u32,
    pub quality: Option<f64>,
    pub weight: Option<f64>,
    pub published_at: Stamp,
    pub server_key: PublicKey,
    pub files: BTreeMap<String, Digest>,
}

/// A review as published, with the key that verifies its signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedReview {
    pub review: Review,
    pub reviewer_key: PublicKey,
}

pub struct PublicationInput<'a> {
    pub suite: &'a TestSuite,
    pub payload: &'a SuitePayload,
    pub salt: Salt,
    pub reviews: Vec<PublishedReview>,
    pub records: Vec<ScoreRecord>,
    pub responses: BTreeMap<ModelId, Vec<String>>,
    /// Models that must have a final record before publication may proceed.
    pub expected_models: BTreeSet<ModelId>,
    pub published_at: Stamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PublishError {
    #[error("revealed payload does not match the commitment")]
    CommitMismatch,
    #[error("evaluation incomplete for {} model(s)", missing.len())]
    EvaluationIncomplete { missing: Vec<ModelId> },
    #[error("stored responses of model {model} do not match its score record")]
    ResponseMismatch { model: ModelId },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{file}: {reason}")]
pub struct BundleError {
    pub file: String,
    pub reason: String,
}

fn fail(file: &str, reason: impl Into<String>) -> BundleError {
    BundleError {
        file: file.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleSummary {
    pub test_id: TestId,
    pub items: usize,
    pub reviews: usize,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PublicationBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("bundle parts are plain data");
    out.push(b'\n');
    out
}

/// Assembles and signs the bundle. Fails without side effects when the
/// payload no longer matches its commitment or a model's record is missing.
pub fn build_bundle(
    input: PublicationInput<'_>,
    server: &SigningIdentity,
) -> Result<PublicationBundle, PublishError> {
    let suite = input.suite;
    if !verify_reveal(&suite.digest, &input.payload.canonical_bytes(), &input.salt) {
        return Err(PublishError::CommitMismatch);
    }
    let recorded: BTreeSet<ModelId> = input.records.iter().map(|r| r.model_id).collect();
    let missing: Vec<ModelId> = input.expected_models.difference(&recorded).copied().collect();
    if !missing.is_empty() {
        return Err(PublishError::EvaluationIncomplete { missing });
    }
    for r in &input.records {
        let ok = input
            .responses
            .get(&r.model_id)
            .is_some_and(|resp| response_hash(resp) == r.response_hash);
        if !ok {
            return Err(PublishError::ResponseMismatch { model: r.model_id });
        }
    }

    let mut records = input.records;
    records.sort_by_key(|r| r.model_id);
    let mut reviews = input.reviews;
    reviews.sort_by_key(|r| r.review.reviewer);

    let mut files = BTreeMap::new();
    files.insert(ITEMS_FILE.to_string(), pretty(input.payload));
    files.insert(REVIEWS_FILE.to_string(), pretty(&reviews));
    files.insert(SCORES_FILE.to_string(), pretty(&records));
    for r in &records {
        files.insert(response_file(&r.model_id), pretty(&input.responses[&r.model_id]));
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        schema: SchemaHeader::default(),
        test_id: suite.id,
        contributor: suite.contributor,
        stream: suite.stream,
        digest: suite.digest,
        salt: input.salt,
        item_count: suite.item_count,
        quality: suite.quality,
        weight: suite.weight,
        published_at: input.published_at,
        server_key: server.public_key(),
        files: files.iter().map(|(k, v)| (k.clone(), sha256(v))).collect(),
    };
    let manifest_bytes = pretty(&manifest);
    let sig = server.sign(&manifest_bytes);
    files.insert(MANIFEST_FILE.to_string(), manifest_bytes);
    files.insert(MANIFEST_SIG_FILE.to_string(), format!("{}\n", sig.to_hex()).into_bytes());
    Ok(PublicationBundle { files })
}

impl PublicationBundle {
    /// SHA-256 of the manifest bytes; recorded in the audit log.
    pub fn hash(&self) -> Digest {
        sha256(self.files.get(MANIFEST_FILE).map_or(&[][..], |v| v))
    }

    pub fn manifest(&self) -> Result<Manifest, BundleError> {
        let bytes = self
            .files
            .get(MANIFEST_FILE)
            .ok_or_else(|| fail(MANIFEST_FILE, "missing"))?;
        serde_json::from_slice(bytes).map_err(|e| fail(MANIFEST_FILE, e.to_string()))
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> std::io::Result<Self> {
        let mut files = BTreeMap::new();
        read_into(dir, dir, &mut files)?;
        Ok(Self { files })
    }
}

fn read_into(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            read_into(root, &path, files)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walked from root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            files.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

fn parse<T: serde::de::DeserializeOwned>(
    bundle: &PublicationBundle,
    name: &str,
) -> Result<T, BundleError> {
    let bytes = bundle.files.get(name).ok_or_else(|| fail(name, "missing"))?;
    serde_json::from_slice(bytes).map_err(|e| fail(name, e.to_string()))
}

/// Checks every part of a bundle: the manifest signature, each file's hash,
/// the commitment, review signatures, response hashes and the recorded
/// scores. With `trusted` set, the manifest must be signed by that key.
pub fn verify_bundle(
    bundle: &PublicationBundle,
    trusted: Option<&PublicKey>,
) -> Result<BundleSummary, BundleError> {
    let manifest = bundle.manifest()?;
    if manifest.format != BUNDLE_FORMAT || manifest.schema != SchemaHeader::default() {
        return Err(fail(MANIFEST_FILE, "unsupported format or schema"));
    }
    if trusted.is_some_and(|k| *k != manifest.server_key) {
        return Err(fail(MANIFEST_FILE, "signed by an untrusted key"));
    }
    let sig_text = bundle
        .files
        .get(MANIFEST_SIG_FILE)
        .ok_or_else(|| fail(MANIFEST_SIG_FILE, "missing"))?;
    let sig = std::str::from_utf8(sig_text)
        .ok()
        .and_then(|s| s.strip_suffix('\n'))
        .and_then(|s| Signature::from_hex(s).ok().filter(|sig| sig.to_hex() == s))
        .ok_or_else(|| fail(MANIFEST_SIG_FILE, "malformed signature"))?;
    if !verify(&manifest.server_key, &bundle.files[MANIFEST_FILE], &sig) {
        return Err(fail(MANIFEST_SIG_FILE, "signature does not verify"));
    }
    for name in bundle.files.keys() {
        if name != MANIFEST_FILE && name != MANIFEST_SIG_FILE && !manifest.files.contains_key(name) {
            return Err(fail(name, "not listed in manifest"));
        }
    }
    for (name, digest) in &manifest.files {
        let bytes = bundle.files.get(name).ok_or_else(|| fail(name, "missing"))?;
        if sha256(bytes) != *digest {
            return Err(fail(name, "hash does not match manifest"));
        }
    }

    let payload: SuitePayload = parse(bundle, ITEMS_FILE)?;
    if !verify_reveal(&manifest.digest, &payload.canonical_bytes(), &manifest.salt) {
        return Err(fail(ITEMS_FILE, "does not match the commitment"));
    }
    if payload.items.len() != manifest.item_count as usize {
        return Err(fail(ITEMS_FILE, "item count differs from manifest"));
    }

    let reviews: Vec<PublishedReview> = parse(bundle, REVIEWS_FILE)?;
    for r in &reviews {
        if r.review.test_id != manifest.test_id
            || ParticipantId::for_key(&r.reviewer_key) != r.review.reviewer
            || !verify_canonical(&r.reviewer_key, &r.review.body(), &r.review.signature)
        {
            return Err(fail(REVIEWS_FILE, format!("review by {} does not verify", r.review.reviewer)));
        }
    }

    let records: Vec<ScoreRecord> = parse(bundle, SCORES_FILE)?;
    for rec in &records {
        let name = response_file(&rec.model_id);
        let responses: Vec<String> = parse(bundle, &name)?;
        if rec.test_id != manifest.test_id
            || rec.item_scores.len() != payload.items.len()
            || responses.len() != payload.items.len()
        {
            return Err(fail(SCORES_FILE, format!("record for {} has the wrong shape", rec.model_id)));
        }
        if response_hash(&responses) != rec.response_hash {
            return Err(fail(&name, "responses do not match the record's hash"));
        }
        if (mean_item_score(&rec.item_scores) - rec.aggregate).abs() > 1e-12 {
            return Err(fail(SCORES_FILE, format!("aggregate of {} is not the item mean", rec.model_id)));
        }
        // Annotated records had items forced to zero; their responses are
        // placeholders and are not rescored.
        if rec.annotation.is_none() {
            for ((item, resp), logged) in payload.items.iter().zip(&responses).zip(&rec.item_scores) {
                let rescored = run_scorer(&item.scorer, &item.reference_answer, resp)
                    .map_err(|e| fail(ITEMS_FILE, e.to_string()))?;
                if rescored != *logged {
                    return Err(fail(SCORES_FILE, format!("score of {} does not match its responses", rec.model_id)));
                }
            }
        }
    }

    Ok(BundleSummary {
        test_id: manifest.test_id,
        items: payload.items.len(),
        reviews: reviews.len(),
        records: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EvalMode, Lane, Rating, ReviewBody, ScorerRule, SuiteState, TestItem};
    use crate::integrity::commit;
    use rand::SeedableRng;

    pub(crate) fn sample() -> (PublicationBundle, SigningIdentity) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let server = SigningIdentity::generate(&mut rng);
        let contributor = SigningIdentity::generate(&mut rng);
        let reviewer = SigningIdentity::generate(&mut rng);
        let payload = SuitePayload {
            items: vec![
                TestItem {
                    prompt: "2+2".into(),
                    reference_answer: "4".into(),
                    scorer: ScorerRule::ExactMatch,
                },
                TestItem {
                    prompt: "capital of France".into(),
                    reference_answer: "paris".into(),
                    scorer: ScorerRule::NormalizedMatch,
                },
            ],
        };
        let salt = Salt::random(&mut rng);
        let c = commit(&payload.canonical_bytes(), &salt);
        let cid = ParticipantId::for_key(&contributor.public_key());
        let suite = TestSuite {
            id: TestId::for_commitment(&cid, &c.digest),
            contributor: cid,
            stream: StreamId::named("math"),
            item_count: 2,
            digest: c.digest,
            schema_version: 1,
            submitted_at: Stamp::new(0, 1),
            admitted_at: Some(Stamp::new(0, 2)),
            lane: Some(Lane::Immediate),
            state: SuiteState::Retired,
            quality: Some(1.5),
            weight: Some(1.05),
            published_at: None,
        };
        let body = ReviewBody {
            test_id: suite.id,
            rating: Rating::new(2).unwrap(),
            rationale: "clear".into(),
        };
        let review = Review {
            test_id: suite.id,
            reviewer: ParticipantId::for_key(&reviewer.public_key()),
            rating: body.rating,
            rationale: body.rationale.clone(),
            signature: reviewer.sign_canonical(&body),
            submitted_at: Stamp::new(1, 5),
        };
        let model = ModelId([9; 32]);
        let responses = vec!["4".to_string(), "Paris".to_string()];
        let record = ScoreRecord {
            test_id: suite.id,
            model_id: model,
            item_scores: vec![1.0, 1.0],
            aggregate: 1.0,
            mode: EvalMode::Immediate,
            cohort: None,
            evaluated_at: Stamp::new(1, 3),
            response_hash: response_hash(&responses),
            annotation: None,
        };
        let bundle = build_bundle(
            PublicationInput {
                suite: &suite,
                payload: &payload,
                salt,
                reviews: vec![PublishedReview {
                    review,
                    reviewer_key: reviewer.public_key(),
                }],
                records: vec![record],
                responses: [(model, responses)].into(),
                expected_models: [model].into(),
                published_at: Stamp::new(2, 9),
            },
            &server,
        )
        .unwrap();
        (bundle, server)
    }

    #[test]
    fn honest_bundle_verifies() {
        let (b, server) = sample();
        let s = verify_bundle(&b, Some(&server.public_key())).unwrap();
        assert_eq!((s.items, s.reviews, s.records), (2, 1, 1));
        assert!(verify_bundle(&b, Some(&PublicKey::default())).is_err());
    }

    #[test]
    fn a_bit_flip_in_every_byte_is_detected() {
        let (b, _) = sample();
        for (name, bytes) in &b.files {
            for i in 0..bytes.len() {
                let bit = i % 8;
                let mut c = b.clone();
                c.files.get_mut(name).unwrap()[i] ^= 1 << bit;
                assert!(verify_bundle(&c, None).is_err(), "{name} byte {i} bit {bit}");
            }
        }
    }

    #[test]
    fn directory_round_trip() {
        let (b, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        b.write_dir(dir.path()).unwrap();
        let back = PublicationBundle::read_dir(dir.path()).unwrap();
        assert_eq!(back, b);
        fs::write(dir.path().join("items.json"), b"{}").unwrap();
        let err = verify_bundle(&PublicationBundle::read_dir(dir.path()).unwrap(), None).unwrap_err();
        assert_eq!(err.file, "items.json");
    }
}
