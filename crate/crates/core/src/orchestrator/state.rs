use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use super::event::{
    CaseKind, CohortJoinBody, Event, MisconductCase, RegistrationBody, RemovalReason, Resolution,
};
use super::{inconsistent, OrchestratorError as E};
use crate::domain::{
    mean_item_score, CohortId, CredentialClaim, EvalMode, Lane, ModelId, ModelRecord, Participant,
    ParticipantId, ParticipantStatus, Review, Role, ScoreRecord, ScoreStatus, Stamp, StreamId,
    SuiteState, TestId, TestSuite,
};
use crate::integrity::beacon::seed_commitment;
use crate::integrity::{verify_canonical, Digest, PublicKey, RandomBeacon};
use crate::reservoir::{next_windows, CohortError, CohortWindow, LiveEntry, Reservoir, WindowState};
use crate::scoring::{
    contributor_score, reviewer_reputation, test_weight, weighted_quality, LeaderboardExport,
    LedgerBoard, LedgerCause, QualityConsensus, ReputationLedger,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub id: StreamId,
    pub name: String,
    pub reservoir: Reservoir,
    pub windows: Vec<CohortWindow>,
    /// Live suites held for the next cohort window.
    pub hold_pool: BTreeSet<TestId>,
    /// Committed suites waiting for reservoir room, oldest first.
    pub pending: Vec<TestId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotStatus {
    Pending,
    Submitted,
    Lapsed,
    /// Quality was finalized before this reviewer answered.
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub assigned_at: Stamp,
    pub deadline: u64,
    pub status: SlotStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub slots: BTreeMap<ParticipantId, Slot>,
    /// Number of assignment draws so far; keys the next beacon derivation.
    pub draws: u32,
}

impl Assignment {
    pub fn count(&self, status: SlotStatus) -> usize {
        self.slots.values().filter(|s| s.status == status).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub record: ModelRecord,
    /// Suites that existed (unpublished) when the model registered.
    pub pre_registration: BTreeSet<TestId>,
    pub cohorts: BTreeSet<CohortId>,
}

/// Everything the public can reconstruct from the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub config: ProtocolConfig,
    pub server_key: PublicKey,
    pub now: u64,
    pub beacon_round: Option<u64>,
    pub beacon_seeds: BTreeMap<u64, [u8; 32]>,
    pub pending_beacon_commitment: Digest,
    pub streams: BTreeMap<StreamId, StreamState>,
    pub participants: BTreeMap<ParticipantId, Participant>,
    pub suites: BTreeMap<TestId, TestSuite>,
    pub digests: BTreeSet<Digest>,
    pub records: BTreeMap<(ModelId, TestId), ScoreRecord>,
    pub models: BTreeMap<ModelId, ModelState>,
    pub assignments: BTreeMap<TestId, Assignment>,
    pub reviews: BTreeMap<TestId, Vec<Review>>,
    pub consensus: BTreeMap<TestId, QualityConsensus>,
    pub ledger: ReputationLedger,
    pub reward_pool: u64,
    /// Weight of published suites per contributor since the last payout.
    pub unrewarded: BTreeMap<ParticipantId, f64>,
    pub cases: BTreeMap<u64, MisconductCase>,
    pub reveals_served: u64,
    pub last_export: Option<LeaderboardExport>,
    /// Stamp of the most recently applied event.
    pub head: Stamp,
}

fn ensure(cond: bool, msg: &str) -> Result<(), E> {
    if cond {
        Ok(())
    } else {
        Err(inconsistent(msg))
    }
}

impl State {
    /// Builds the initial state from a genesis event.
    pub fn genesis(stamp: Stamp, event: &Event) -> Result<Self, E> {
        let Event::Genesis {
            schema,
            config,
            config_hash,
            server_key,
            beacon_commitment,
        } = event
        else {
            return Err(inconsistent("log must start with genesis"));
        };
        ensure(stamp.seq == 0, "genesis must be entry 0")?;
        ensure(*schema == crate::canonical::SchemaHeader::default(), "unsupported schema")?;
        config.validate()?;
        ensure(config.hash() == *config_hash, "config hash mismatch")?;
        let streams = config
            .streams
            .iter()
            .map(|name| {
                let id = StreamId::named(name);
                let st = StreamState {
                    id,
                    name: name.clone(),
                    reservoir: Reservoir::new(id, config.capacity),
                    windows: next_windows(id, 0, config.max_window_index, config.ticks_per_day),
                    hold_pool: BTreeSet::new(),
                    pending: Vec::new(),
                };
                (id, st)
            })
            .collect();
        Ok(State {
            config: config.clone(),
            server_key: *server_key,
            now: 0,
            beacon_round: None,
            beacon_seeds: BTreeMap::new(),
            pending_beacon_commitment: *beacon_commitment,
            streams,
            participants: BTreeMap::new(),
            suites: BTreeMap::new(),
            digests: BTreeSet::new(),
            records: BTreeMap::new(),
            models: BTreeMap::new(),
            assignments: BTreeMap::new(),
            reviews: BTreeMap::new(),
            consensus: BTreeMap::new(),
            ledger: ReputationLedger::default(),
            reward_pool: 0,
            unrewarded: BTreeMap::new(),
            cases: BTreeMap::new(),
            reveals_served: 0,
            last_export: None,
            head: stamp,
        })
    }

    // ---- derived views -------------------------------------------------

    pub fn round_of(&self, tick: u64) -> u64 {
        tick / self.config.ticks_per_day
    }

    pub fn current_round(&self) -> u64 {
        self.round_of(self.now)
    }

    /// Beacon of the latest revealed round.
    pub fn beacon(&self) -> Option<(u64, RandomBeacon)> {
        let r = self.beacon_round?;
        Some((r, RandomBeacon::new(self.beacon_seeds[&r])))
    }

    pub fn participant(&self, id: &ParticipantId) -> Result<&Participant, E> {
        self.participants.get(id).ok_or(E::UnknownParticipant(*id))
    }

    pub fn active_with_role(&self, id: &ParticipantId, role: Role) -> Result<&Participant, E> {
        let p = self.participant(id)?;
        if p.role != role {
            return Err(E::WrongRole(role));
        }
        if !p.is_active() {
            return Err(E::NotActive(*id));
        }
        Ok(p)
    }

    pub fn suite(&self, id: &TestId) -> Result<&TestSuite, E> {
        self.suites.get(id).ok_or(E::UnknownSuite(*id))
    }

    pub fn stream(&self, id: &StreamId) -> Result<&StreamState, E> {
        self.streams.get(id).ok_or(E::UnknownStream)
    }

    pub fn model_is_active(&self, m: &ModelState) -> bool {
        self.participants
            .get(&m.record.creator)
            .is_some_and(|p| p.is_active())
    }

    /// Active models enrolled in `stream`.
    pub fn stream_models(&self, stream: &StreamId) -> Vec<ModelId> {
        self.models
            .values()
            .filter(|m| m.record.streams.contains(stream) && self.model_is_active(m))
            .map(|m| m.record.id)
            .collect()
    }

    /// Models that still lack a record for a live suite.
    pub fn missing_evaluations(&self, test: &TestId) -> Vec<ModelId> {
        let Some(suite) = self.suites.get(test) else {
            return Vec::new();
        };
        self.stream_models(&suite.stream)
            .into_iter()
            .filter(|m| !self.records.contains_key(&(*m, *test)))
            .collect()
    }

    pub fn is_held(&self, test: &TestId) -> bool {
        self.suites
            .get(test)
            .and_then(|s| self.streams.get(&s.stream))
            .is_some_and(|st| st.hold_pool.contains(test))
    }

    /// Retirement eligibility: final weight, not held for a cohort, and
    /// evaluated on every active model of the stream.
    pub fn retirement_eligible(&self, test: &TestId) -> bool {
        self.suites.get(test).is_some_and(|s| {
            s.state == SuiteState::Live
                && s.weight.is_some()
                && !self.is_held(test)
                && self.missing_evaluations(test).is_empty()
        })
    }

    pub fn stream_weights(&self, stream: &StreamId) -> BTreeMap<TestId, Option<f64>> {
        self.streams[stream]
            .reservoir
            .live
            .iter()
            .map(|e| (e.test_id, self.suites[&e.test_id].weight))
            .collect()
    }

    pub fn contributor_reputation(&self, id: &ParticipantId) -> f64 {
        let qualities: Vec<f64> = self
            .suites
            .values()
            .filter(|s| s.contributor == *id && s.state != SuiteState::Invalidated)
            .filter_map(|s| s.quality)
            .collect();
        let bonus = self.participants.get(id).map_or(0, |p| p.bonus_points());
        contributor_score(&qualities, bonus as i64)
    }

    /// (stream, rating given, consensus) for every finalized suite the
    /// reviewer rated.
    pub fn reviewer_history(&self, id: &ParticipantId) -> Vec<(StreamId, f64, f64)> {
        self.consensus
            .iter()
            .filter(|(t, _)| self.suites[*t].state != SuiteState::Invalidated)
            .flat_map(|(t, c)| {
                let stream = self.suites[t].stream;
                self.reviews[t]
                    .iter()
                    .filter(|r| r.reviewer == *id)
                    .map(move |r| (stream, r.rating.as_f64(), c.q_bar))
            })
            .collect()
    }

    pub fn reviewer_reputation(&self, id: &ParticipantId) -> f64 {
        reviewer_reputation(&self.reviewer_history(id))
    }

    /// Whether a removal threshold applies to an active participant.
    pub fn below_threshold(&self, id: &ParticipantId) -> bool {
        let Some(p) = self.participants.get(id) else {
            return false;
        };
        let t = &self.config.thresholds;
        p.is_active()
            && match p.role {
                Role::Contributor => self.ledger.contributor_rep(id) < t.contributor_min,
                Role::Reviewer => {
                    self.reviewer_history(id).len() >= t.reviewer_min_reviews as usize
                        && self.ledger.reviewer_rep(id) < t.reviewer_min
                }
                Role::ModelCreator => false,
            }
    }

    /// Converged once every suite predating registration is settled and at
    /// least one post-registration suite has been scored.
    pub fn convergence_due(&self, id: &ModelId) -> bool {
        let Some(m) = self.models.get(id) else {
            return false;
        };
        if m.record.score_status == ScoreStatus::Converged {
            return false;
        }
        let settled = m.pre_registration.iter().all(|t| {
            matches!(
                self.suites[t].state,
                SuiteState::Published | SuiteState::Invalidated
            )
        });
        settled
            && self.records.range((*id, TestId::default())..).take_while(|((mm, _), _)| mm == id).any(
                |((_, t), _)| self.suites[t].admitted_at.is_some_and(|a| a > m.record.registered_at),
            )
    }

    /// Reviewers to add so a suite has `min_reviews` open or answered
    /// slots. Candidates are active reviewers other than the contributor
    /// who were not drawn before; each is picked with probability
    /// proportional to `exp(rho / temperature)`, without replacement, from
    /// a beacon stream keyed by the suite and the draw count.
    pub fn reviewer_draw(&self, test: &TestId) -> Vec<ParticipantId> {
        let Some(s) = self.suites.get(test) else {
            return Vec::new();
        };
        let a = self.assignments.get(test);
        let open = a.map_or(0, |a| a.count(SlotStatus::Pending) + a.count(SlotStatus::Submitted));
        let need = self.config.min_reviews.saturating_sub(open);
        let Some((round, beacon)) = self.beacon() else {
            return Vec::new();
        };
        if need == 0 {
            return Vec::new();
        }
        let mut pool: Vec<(ParticipantId, f64)> = self
            .participants
            .values()
            .filter(|p| p.role == Role::Reviewer && p.is_active() && p.id != s.contributor)
            .filter(|p| a.is_none_or(|a| !a.slots.contains_key(&p.id)))
            .map(|p| (p.id, self.ledger.reviewer_rep(&p.id)))
            .collect();
        let top = pool.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
        let tau = self.config.reviewer_temperature;
        let mut weights: Vec<f64> = pool.iter().map(|(_, r)| ((r - top) / tau).exp()).collect();
        let draws = a.map_or(0, |a| a.draws);
        let mut stream = beacon.derive(&[b"assign".as_slice(), test.as_bytes(), &draws.to_le_bytes()].concat());
        let mut out = Vec::with_capacity(need);
        while out.len() < need && !pool.is_empty() {
            let total: f64 = weights.iter().sum();
            let mut u = stream.next_unit(round) * total;
            let mut pick = pool.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            out.push(pool.remove(pick).0);
            weights.remove(pick);
        }
        out
    }

    /// Payouts of the reward pool, proportional to published weight.
    pub fn reward_payouts(&self) -> Vec<(ParticipantId, u64)> {
        let total: f64 = self.unrewarded.values().sum();
        if self.reward_pool == 0 || total.is_nan() || total <= 0.0 {
            return Vec::new();
        }
        self.unrewarded
            .iter()
            .filter(|(id, _)| self.participants.get(id).is_some_and(|p| p.is_active()))
            .map(|(id, w)| (*id, ((self.reward_pool as f64) * (w / total)).floor() as u64))
            .filter(|(_, amt)| *amt > 0)
            .collect()
    }

    fn window_mut(&mut self, stream: &StreamId, cohort: &CohortId) -> Result<&mut CohortWindow, E> {
        self.streams
            .get_mut(stream)
            .ok_or(E::UnknownStream)?
            .windows
            .iter_mut()
            .find(|w| w.id == *cohort)
            .ok_or_else(|| inconsistent("unknown cohort window"))
    }

    pub fn window(&self, stream: &StreamId, cohort: &CohortId) -> Option<&CohortWindow> {
        self.streams.get(stream)?.windows.iter().find(|w| w.id == *cohort)
    }

    fn transition(&mut self, id: &TestId, to: SuiteState) -> Result<(), E> {
        let s = self.suites.get_mut(id).ok_or(E::UnknownSuite(*id))?;
        if !s.state.can_transition(to) {
            return Err(E::InvalidTransition {
                id: *id,
                from: s.state,
                to,
            });
        }
        s.state = to;
        Ok(())
    }

    fn check_transition(&self, id: &TestId, to: SuiteState) -> Result<&TestSuite, E> {
        let s = self.suite(id)?;
        if !s.state.can_transition(to) {
            return Err(E::InvalidTransition {
                id: *id,
                from: s.state,
                to,
            });
        }
        Ok(s)
    }

    // ---- event application ---------------------------------------------

    /// Applies one event. Every arm validates before it mutates, so an
    /// error leaves the state unchanged.
    pub fn apply(&mut self, stamp: Stamp, event: &Event) -> Result<(), E> {
        ensure(stamp > self.head, "stamps must increase")?;
        ensure(stamp.tick == self.now || matches!(event, Event::ClockAdvanced { .. }), "stamp tick differs from clock")?;
        self.apply_inner(stamp, event)?;
        self.head = stamp;
        Ok(())
    }

    fn apply_inner(&mut self, stamp: Stamp, event: &Event) -> Result<(), E> {
        match event {
            Event::Genesis { .. } => Err(inconsistent("second genesis")),

            Event::BeaconRevealed {
                round,
                seed,
                next_commitment,
            } => {
                let expected = self.beacon_round.map_or(0, |r| r + 1);
                ensure(*round == expected, "beacon round out of order")?;
                ensure(*round <= self.current_round(), "beacon revealed early")?;
                ensure(
                    seed_commitment(seed) == self.pending_beacon_commitment,
                    "beacon seed does not match its commitment",
                )?;
                self.beacon_round = Some(*round);
                self.beacon_seeds.insert(*round, *seed);
                self.pending_beacon_commitment = *next_commitment;
                Ok(())
            }

            Event::ClockAdvanced { tick } => {
                if *tick < self.now {
                    return Err(E::ClockRewind {
                        now: self.now,
                        to: *tick,
                    });
                }
                ensure(stamp.tick == *tick, "clock stamp mismatch")?;
                self.now = *tick;
                Ok(())
            }

            Event::ParticipantRegistered {
                id,
                role,
                public_key,
                credentials,
                stake,
                proof,
            } => {
                ensure(ParticipantId::for_key(public_key) == *id, "id is not the key hash")?;
                if self.participants.contains_key(id) {
                    return Err(E::DuplicateKey);
                }
                let need = self.config.min_stake.for_role(*role);
                if *stake < need {
                    return Err(E::InsufficientStake { need, got: *stake });
                }
                for c in credentials {
                    ensure(
                        c.bonus_points == self.config.bonus.points(c.kind),
                        "credential bonus differs from table",
                    )?;
                }
                let body = RegistrationBody {
                    role: *role,
                    public_key: *public_key,
                    credentials: credentials
                        .iter()
                        .map(|c| CredentialClaim {
                            kind: c.kind,
                            evidence_hash: c.evidence_hash,
                        })
                        .collect(),
                    stake: *stake,
                };
                if !verify_canonical(public_key, &body, proof) {
                    return Err(E::BadSignature);
                }
                let p = Participant {
                    id: *id,
                    role: *role,
                    public_key: *public_key,
                    credentials: credentials.clone(),
                    stake: *stake,
                    slash_shortfall: 0,
                    status: ParticipantStatus::Active,
                    registered_at: stamp,
                };
                if *role == Role::Contributor {
                    self.ledger.set(
                        LedgerBoard::Contributor,
                        *id,
                        p.bonus_points() as f64,
                        stamp,
                        LedgerCause::Bonus,
                    );
                }
                self.participants.insert(*id, p);
                Ok(())
            }

            Event::SuiteCommitted {
                id,
                contributor,
                body,
                signature,
            } => {
                let p = self.active_with_role(contributor, Role::Contributor)?;
                if !self.streams.contains_key(&body.stream) {
                    return Err(E::UnknownStream);
                }
                if self.digests.contains(&body.digest) {
                    return Err(E::DuplicateSuite);
                }
                ensure(
                    TestId::for_commitment(contributor, &body.digest) == *id,
                    "suite id does not match commitment",
                )?;
                if !verify_canonical(&p.public_key, body, signature) {
                    return Err(E::BadSignature);
                }
                self.digests.insert(body.digest);
                self.suites.insert(
                    *id,
                    TestSuite {
                        id: *id,
                        contributor: *contributor,
                        stream: body.stream,
                        item_count: body.item_count,
                        digest: body.digest,
                        schema_version: body.schema_version,
                        submitted_at: stamp,
                        admitted_at: None,
                        lane: None,
                        state: SuiteState::Committed,
                        quality: None,
                        weight: None,
                        published_at: None,
                    },
                );
                Ok(())
            }

            Event::SuiteInvalidated { id, .. } => {
                let stream = self.check_transition(id, SuiteState::Invalidated)?.stream;
                self.transition(id, SuiteState::Invalidated)?;
                let st = self.streams.get_mut(&stream).expect("suite stream exists");
                st.reservoir.drop_suite(id);
                st.hold_pool.remove(id);
                st.pending.retain(|t| t != id);
                if let Some(a) = self.assignments.get_mut(id) {
                    for slot in a.slots.values_mut() {
                        if slot.status == SlotStatus::Pending {
                            slot.status = SlotStatus::Closed;
                        }
                    }
                }
                Ok(())
            }

            Event::SuiteQueued { id } => {
                let s = self.suite(id)?;
                ensure(s.state == SuiteState::Committed, "only committed suites queue")?;
                let stream = s.stream;
                let st = self.streams.get_mut(&stream).expect("suite stream exists");
                ensure(!st.pending.contains(id), "suite already queued")?;
                st.pending.push(*id);
                Ok(())
            }

            Event::SuiteAdmitted { id, lane, round } => {
                let s = self.check_transition(id, SuiteState::Live)?;
                let stream = s.stream;
                ensure(Some(*round) == self.beacon_round, "routing must use the current beacon round")?;
                let st = &self.streams[&stream];
                ensure(!st.reservoir.is_full(), "reservoir full: retire before admitting")?;
                ensure(!st.reservoir.tracks(id), "suite already tracked")?;
                self.transition(id, SuiteState::Live)?;
                let s = self.suites.get_mut(id).expect("checked");
                s.admitted_at = Some(stamp);
                s.lane = Some(*lane);
                let st = self.streams.get_mut(&stream).expect("checked");
                st.reservoir.push_live(LiveEntry {
                    test_id: *id,
                    admitted_at: stamp,
                    lane: *lane,
                });
                st.pending.retain(|t| t != id);
                if *lane == Lane::CohortHold {
                    st.hold_pool.insert(*id);
                }
                Ok(())
            }

            Event::ModelRegistered {
                id,
                creator,
                body,
                signature,
            } => {
                let p = self.active_with_role(creator, Role::ModelCreator)?;
                ensure(body.endpoint.auth_token.is_empty(), "endpoint must be logged redacted")?;
                body.endpoint.validate().map_err(E::EndpointValidationFailed)?;
                ensure(!body.streams.is_empty(), "model must enter at least one stream")?;
                if body.streams.iter().any(|s| !self.streams.contains_key(s)) {
                    return Err(E::UnknownStream);
                }
                ensure(ModelId::assign(creator, body.nonce) == *id, "model id mismatch")?;
                ensure(!self.models.contains_key(id), "model already registered")?;
                if !verify_canonical(&p.public_key, body, signature) {
                    return Err(E::BadSignature);
                }
                let pre_registration = self
                    .suites
                    .values()
                    .filter(|s| {
                        body.streams.contains(&s.stream)
                            && matches!(
                                s.state,
                                SuiteState::Committed | SuiteState::Live | SuiteState::Retired
                            )
                    })
                    .map(|s| s.id)
                    .collect();
                self.models.insert(
                    *id,
                    ModelState {
                        record: ModelRecord {
                            id: *id,
                            creator: *creator,
                            endpoint: body.endpoint.clone(),
                            registered_at: stamp,
                            streams: body.streams.clone(),
                            score_status: ScoreStatus::Preliminary,
                        },
                        pre_registration,
                        cohorts: BTreeSet::new(),
                    },
                );
                Ok(())
            }

            Event::CohortJoined {
                model,
                stream,
                cohort,
                signature,
            } => {
                let m = self.models.get(model).ok_or(E::UnknownModel(*model))?;
                ensure(m.record.streams.contains(stream), "model not enrolled in stream")?;
                let creator = self.active_with_role(&m.record.creator, Role::ModelCreator)?;
                let body = CohortJoinBody {
                    model: *model,
                    stream: *stream,
                };
                if !verify_canonical(&creator.public_key, &body, signature) {
                    return Err(E::BadSignature);
                }
                let now = self.now;
                let w = self
                    .window(stream, cohort)
                    .ok_or_else(|| inconsistent("unknown cohort window"))?;
                ensure(w.state == WindowState::Open && w.closes_at >= now, "window not open")?;
                self.window_mut(stream, cohort)?.registered.insert(*model);
                self.models.get_mut(model).expect("checked").cohorts.insert(*cohort);
                Ok(())
            }

            Event::ScoreRecorded { record } => {
                let key = (record.model_id, record.test_id);
                if self.records.contains_key(&key) {
                    return Err(E::DuplicateScore {
                        model: key.0,
                        test: key.1,
                    });
                }
                let s = self.suite(&record.test_id)?;
                ensure(s.state == SuiteState::Live, "only live suites are evaluated")?;
                let m = self.models.get(&record.model_id).ok_or(E::UnknownModel(record.model_id))?;
                ensure(m.record.streams.contains(&s.stream), "model not enrolled in stream")?;
                ensure(record.evaluated_at == stamp, "record stamp mismatch")?;
                ensure(record.item_scores.len() == s.item_count as usize, "record item count")?;
                ensure(
                    record.item_scores.iter().all(|x| (0.0..=1.0).contains(x)),
                    "item scores must lie in [0, 1]",
                )?;
                ensure(
                    (mean_item_score(&record.item_scores) - record.aggregate).abs() <= 1e-12,
                    "aggregate is not the item mean",
                )?;
                let held = self.is_held(&record.test_id);
                match (record.mode, record.cohort) {
                    (EvalMode::Immediate, None) => {
                        ensure(!held, "held suites are scored only by their window")?
                    }
                    (EvalMode::Cohort, Some(c)) => {
                        let w = self
                            .window(&s.stream, &c)
                            .ok_or_else(|| inconsistent("unknown cohort"))?;
                        ensure(
                            w.state == WindowState::Closed
                                && w.registered.contains(&record.model_id)
                                && w.test_set_hold.contains(&record.test_id),
                            "pair not in the window's evaluation order",
                        )?;
                    }
                    _ => return Err(inconsistent("mode and cohort disagree")),
                }
                self.records.insert(key, record.clone());
                Ok(())
            }

            Event::ReviewersAssigned {
                test_id,
                reviewers,
                deadline,
                round,
            } => {
                let s = self.suite(test_id)?;
                ensure(s.state == SuiteState::Live, "only live suites are reviewed")?;
                ensure(!self.consensus.contains_key(test_id), "quality already final")?;
                ensure(Some(*round) == self.beacon_round, "draw must use the current beacon round")?;
                ensure(*deadline == self.now + self.config.deadline_ticks(), "deadline off policy")?;
                ensure(!self.is_held(test_id), "held suites are reviewed after their window")?;
                ensure(!reviewers.is_empty(), "empty reviewer draw")?;
                ensure(*reviewers == self.reviewer_draw(test_id), "reviewers differ from the beacon draw")?;
                let contributor = s.contributor;
                let existing = self.assignments.get(test_id);
                let mut seen = BTreeSet::new();
                for r in reviewers {
                    self.active_with_role(r, Role::Reviewer)?;
                    if *r == contributor {
                        return Err(E::SelfReview);
                    }
                    ensure(seen.insert(*r), "reviewer drawn twice")?;
                    ensure(
                        existing.is_none_or(|a| !a.slots.contains_key(r)),
                        "reviewer already assigned",
                    )?;
                }
                let a = self.assignments.entry(*test_id).or_default();
                a.draws += 1;
                for r in reviewers {
                    a.slots.insert(
                        *r,
                        Slot {
                            assigned_at: stamp,
                            deadline: *deadline,
                            status: SlotStatus::Pending,
                        },
                    );
                }
                Ok(())
            }

            Event::ReviewLapsed { test_id, reviewer } => {
                let now = self.now;
                let active = self.participants.get(reviewer).is_some_and(|p| p.is_active());
                let slot = self
                    .assignments
                    .get_mut(test_id)
                    .and_then(|a| a.slots.get_mut(reviewer))
                    .ok_or(E::NotAssigned)?;
                ensure(slot.status == SlotStatus::Pending, "slot not pending")?;
                ensure(now > slot.deadline || !active, "deadline not reached")?;
                slot.status = SlotStatus::Lapsed;
                Ok(())
            }

            Event::RevealServed {
                test_id,
                reviewer,
                round,
                items,
            } => {
                let s = self.suite(test_id)?;
                let slot = self
                    .assignments
                    .get(test_id)
                    .and_then(|a| a.slots.get(reviewer))
                    .ok_or(E::NotAssigned)?;
                ensure(slot.status == SlotStatus::Pending, "reveal only for pending reviews")?;
                ensure(Some(*round) == self.beacon_round, "reveal must use the current round")?;
                let (r, beacon) = self.beacon().expect("round checked");
                let expected: Vec<u32> = crate::integrity::draw_reveal_subset(
                    &beacon,
                    r,
                    test_id.as_bytes(),
                    s.item_count as usize,
                    self.config.reveal_fraction,
                )
                .into_iter()
                .map(|i| i as u32)
                .collect();
                ensure(*items == expected, "reveal subset differs from the beacon draw")?;
                self.reveals_served += 1;
                Ok(())
            }

            Event::ReviewSubmitted { review } => {
                let s = self.suite(&review.test_id)?;
                if review.reviewer == s.contributor {
                    return Err(E::SelfReview);
                }
                if self.consensus.contains_key(&review.test_id) {
                    return Err(E::AlreadyFinalized);
                }
                let p = self.active_with_role(&review.reviewer, Role::Reviewer)?;
                let slot = self
                    .assignments
                    .get(&review.test_id)
                    .and_then(|a| a.slots.get(&review.reviewer))
                    .ok_or(E::NotAssigned)?;
                match slot.status {
                    SlotStatus::Pending => {}
                    SlotStatus::Submitted => return Err(E::AlreadyReviewed),
                    SlotStatus::Lapsed => return Err(E::DeadlineLapsed),
                    SlotStatus::Closed => return Err(E::AlreadyFinalized),
                }
                if self.now > slot.deadline {
                    return Err(E::DeadlineLapsed);
                }
                ensure(review.submitted_at == stamp, "review stamp mismatch")?;
                if !verify_canonical(&p.public_key, &review.body(), &review.signature) {
                    return Err(E::BadSignature);
                }
                self.assignments
                    .get_mut(&review.test_id)
                    .and_then(|a| a.slots.get_mut(&review.reviewer))
                    .expect("checked")
                    .status = SlotStatus::Submitted;
                self.reviews.entry(review.test_id).or_default().push(review.clone());
                Ok(())
            }

            Event::QualityFinalized {
                test_id,
                reviews,
                q_bar,
            } => {
                if self.consensus.contains_key(test_id) {
                    return Err(E::AlreadyFinalized);
                }
                let given = self.reviews.get(test_id).map_or(&[][..], |v| v);
                ensure(given.len() >= self.config.min_reviews, "not enough reviews")?;
                let expected: Vec<_> = given
                    .iter()
                    .map(|r| (r.reviewer, r.rating, self.ledger.reviewer_rep(&r.reviewer)))
                    .collect();
                ensure(*reviews == expected, "finalized reviews differ from submitted")?;
                let pairs: Vec<_> = reviews.iter().map(|(_, r, rho)| (*r, *rho)).collect();
                let q = weighted_quality(&pairs, self.config.weight_floor);
                ensure(q.to_bits() == q_bar.to_bits(), "consensus quality mismatch")?;
                self.suites.get_mut(test_id).expect("reviews imply suite").quality = Some(q);
                self.consensus.insert(
                    *test_id,
                    QualityConsensus {
                        test_id: *test_id,
                        reviews: pairs,
                        q_bar: q,
                    },
                );
                if let Some(a) = self.assignments.get_mut(test_id) {
                    for slot in a.slots.values_mut() {
                        if slot.status == SlotStatus::Pending {
                            slot.status = SlotStatus::Closed;
                        }
                    }
                }
                Ok(())
            }

            Event::WeightAssigned {
                test_id,
                contributor_reputation,
                weight,
            } => {
                let s = self.suite(test_id)?;
                let q = s.quality.ok_or_else(|| inconsistent("weight before quality"))?;
                ensure(s.weight.is_none(), "weight already set")?;
                let rho = self.ledger.contributor_rep(&s.contributor);
                ensure(rho.to_bits() == contributor_reputation.to_bits(), "contributor reputation mismatch")?;
                ensure(test_weight(q, rho).to_bits() == weight.to_bits(), "weight mismatch")?;
                self.suites.get_mut(test_id).expect("checked").weight = Some(*weight);
                Ok(())
            }

            Event::ReputationsRefreshed {
                test_id,
                contributor,
                reviewers,
            } => {
                let s = self.suite(test_id)?;
                ensure(s.contributor == contributor.0, "refresh names the wrong contributor")?;
                ensure(
                    self.contributor_reputation(&contributor.0).to_bits() == contributor.1.to_bits(),
                    "contributor reputation mismatch",
                )?;
                for (r, v) in reviewers {
                    ensure(
                        self.reviewer_reputation(r).to_bits() == v.to_bits(),
                        "reviewer reputation mismatch",
                    )?;
                }
                let cause = LedgerCause::ReviewCompletion(*test_id);
                self.ledger.set(LedgerBoard::Contributor, contributor.0, contributor.1, stamp, cause.clone());
                for (r, v) in reviewers {
                    self.ledger.set(LedgerBoard::Reviewer, *r, *v, stamp, cause.clone());
                }
                Ok(())
            }

            Event::SuiteRetired { id, .. } => {
                let s = self.check_transition(id, SuiteState::Retired)?;
                ensure(s.weight.is_some(), "retiring a suite without final weight")?;
                ensure(!self.is_held(id), "held suites cannot retire")?;
                let stream = s.stream;
                ensure(self.streams[&stream].reservoir.is_live(id), "suite not live")?;
                self.streams.get_mut(&stream).expect("checked").reservoir.retire(id)?;
                self.transition(id, SuiteState::Retired)?;
                Ok(())
            }

            Event::SuitePublished { id, .. } => {
                let s = self.check_transition(id, SuiteState::Published)?;
                let (stream, contributor, weight) = (s.stream, s.contributor, s.weight.unwrap_or(0.0));
                self.streams.get_mut(&stream).expect("suite stream").reservoir.mark_published(id)?;
                self.transition(id, SuiteState::Published)?;
                self.suites.get_mut(id).expect("checked").published_at = Some(stamp);
                if weight > 0.0 {
                    *self.unrewarded.entry(contributor).or_default() += weight;
                }
                Ok(())
            }

            Event::WindowClosed {
                stream,
                cohort,
                models,
                tests,
            } => {
                let pool = self.stream(stream)?.hold_pool.clone();
                let now = self.now;
                let w = self.window(stream, cohort).ok_or_else(|| inconsistent("unknown window"))?;
                let mut probe = w.clone();
                let order = probe.close(now, &pool)?;
                ensure(order.models == *models && order.tests == *tests, "window order mismatch")?;
                *self.window_mut(stream, cohort)? = probe;
                Ok(())
            }

            Event::WindowEmpty { stream, cohort } => {
                let pool = self.stream(stream)?.hold_pool.clone();
                let now = self.now;
                let w = self.window(stream, cohort).ok_or_else(|| inconsistent("unknown window"))?;
                let mut probe = w.clone();
                match probe.close(now, &pool) {
                    Err(CohortError::EmptyCohort) => {}
                    Err(e) => return Err(e.into()),
                    Ok(_) => return Err(inconsistent("window is not empty")),
                }
                *self.window_mut(stream, cohort)? = probe;
                Ok(())
            }

            Event::WindowEvaluated { stream, cohort } => {
                let w = self.window(stream, cohort).ok_or_else(|| inconsistent("unknown window"))?;
                ensure(w.state == WindowState::Closed, "window not closed")?;
                for m in &w.registered {
                    for t in &w.test_set_hold {
                        let live = self.suites[t].state == SuiteState::Live;
                        ensure(
                            !live || self.records.contains_key(&(*m, *t)),
                            "window evaluation incomplete",
                        )?;
                    }
                }
                let tests = w.test_set_hold.clone();
                self.window_mut(stream, cohort)?.mark_evaluated();
                let st = self.streams.get_mut(stream).expect("checked");
                for t in &tests {
                    st.hold_pool.remove(t);
                    st.reservoir.set_lane(t, Lane::Immediate);
                }
                for t in &tests {
                    if let Some(s) = self.suites.get_mut(t) {
                        if s.state == SuiteState::Live {
                            s.lane = Some(Lane::Immediate);
                        }
                    }
                }
                Ok(())
            }

            Event::WindowsScheduled {
                stream,
                origin,
                first_index,
            } => {
                let tpd = self.config.ticks_per_day;
                let max = self.config.max_window_index;
                let st = self.streams.get_mut(stream).ok_or(E::UnknownStream)?;
                let next_index = st.windows.last().map_or(0, |w| w.index + 1);
                ensure(*first_index == next_index, "window indices must continue")?;
                ensure(st.windows.iter().all(|w| w.closes_at <= *origin), "new windows overlap old ones")?;
                for mut w in next_windows(*stream, *origin, max, tpd) {
                    w.index += first_index;
                    w.id = CohortId::for_window(stream, w.index);
                    st.windows.push(w);
                }
                Ok(())
            }

            Event::ModelConverged { id } => {
                ensure(self.convergence_due(id), "model not ready to converge")?;
                self.models.get_mut(id).expect("checked").record.score_status = ScoreStatus::Converged;
                Ok(())
            }

            Event::CaseOpened { case } => {
                ensure(case.id == self.cases.len() as u64, "case ids are sequential")?;
                self.participant(&case.subject)?;
                ensure(case.resolution == Resolution::Pending, "new cases are pending")?;
                ensure(case.opened_at == self.now, "case open time mismatch")?;
                ensure(!case.evidence.is_empty(), "case needs evidence")?;
                ensure(case.evidence.iter().all(|s| *s < stamp.seq), "evidence must precede the case")?;
                self.cases.insert(case.id, case.clone());
                Ok(())
            }

            Event::CaseResolved {
                id,
                resolution,
                shortfall,
            } => {
                let case = self.cases.get(id).ok_or(E::UnknownCase(*id))?;
                if case.resolution != Resolution::Pending {
                    return Err(E::AlreadyResolved(*id));
                }
                let subject = case.subject;
                let p = self.participant(&subject)?;
                match resolution {
                    Resolution::Pending => return Err(inconsistent("cannot resolve to pending")),
                    Resolution::Slashed { amount, .. } => {
                        ensure(*amount <= p.stake, "slash exceeds stake")?;
                    }
                    Resolution::Dismissed | Resolution::Removed => {}
                }
                let p = self.participants.get_mut(&subject).expect("checked");
                p.slash_shortfall += shortfall;
                match resolution {
                    Resolution::Slashed { amount, removed } => {
                        p.stake -= amount;
                        self.reward_pool += amount;
                        if *removed {
                            p.status = ParticipantStatus::Removed;
                        }
                    }
                    Resolution::Removed => p.status = ParticipantStatus::Removed,
                    _ => {}
                }
                self.cases.get_mut(id).expect("checked").resolution = *resolution;
                Ok(())
            }

            Event::ParticipantRemoved { id, reason } => {
                let p = self.participant(id)?;
                if !p.is_active() {
                    return Err(E::NotActive(*id));
                }
                match reason {
                    RemovalReason::BelowThreshold => {
                        ensure(self.below_threshold(id), "participant is above threshold")?
                    }
                    RemovalReason::Misconduct(case) => {
                        let c = self.cases.get(case).ok_or(E::UnknownCase(*case))?;
                        ensure(c.subject == *id, "case names another subject")?;
                    }
                }
                self.participants.get_mut(id).expect("checked").status = ParticipantStatus::Removed;
                Ok(())
            }

            Event::RewardsDistributed { payouts } => {
                ensure(*payouts == self.reward_payouts(), "payouts differ from policy")?;
                let total: u64 = payouts.iter().map(|(_, a)| a).sum();
                ensure(total <= self.reward_pool, "payouts exceed pool")?;
                for (id, amount) in payouts {
                    self.participants.get_mut(id).expect("checked by policy").stake += amount;
                }
                self.reward_pool -= total;
                self.unrewarded.clear();
                Ok(())
            }

            Event::LeaderboardsRebuilt { hash } => {
                let export = self.build_export(stamp);
                ensure(export.hash() == *hash, "leaderboard hash mismatch")?;
                self.last_export = Some(export);
                Ok(())
            }
        }
    }

    /// The open case of `kind` against `subject`, if any.
    pub fn open_case(&self, subject: &ParticipantId, kind: CaseKind) -> Option<&MisconductCase> {
        self.cases
            .values()
            .find(|c| c.subject == *subject && c.kind == kind && c.resolution == Resolution::Pending)
    }

    /// Total credits held as stake or in the reward pool.
    pub fn total_credits(&self) -> u64 {
        self.participants.values().map(|p| p.stake).sum::<u64>() + self.reward_pool
    }
}
