//! The deterministic slot loop: timers, per-node MAC decisions, medium
//! resolution, protocol handlers, energy accounting and invariant checks,
//! plus end-of-run metrics assembly.

pub mod config;
pub mod metrics;
pub mod node;
pub mod trace;

pub use config::{ScenarioConfig, SixpAddStyle, StackMode};
pub use metrics::{NodeMetrics, PacketRecord};
pub use node::DataLedger;
pub use trace::{Trace, TraceEvent};

use crate::mac::{ChargeTable, EnergyLedger, EnergyState, LinkAck};
use crate::model::{Asn, NodeStatus};
use crate::packet::PacketKind;
use crate::pb::max_injected_list_length;
use crate::radio::{resolve_reception, RxOutcome, Topology, TopologyError, TxIntent};
use crate::rng::{Purpose, RngHub};
use node::{NodeRuntime, RadioPlan, SimCtx, SimSinks};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Everything one run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub topology_hash: u64,
    pub nodes: Vec<NodeMetrics>,
    pub packets: Vec<PacketRecord>,
    pub events: Vec<TraceEvent>,
    pub violations: Vec<String>,
    pub generated_data: u64,
    pub delivered_data: u64,
    pub dropped_data: u64,
    pub charge_total_uc: f64,
    pub joined_count: u32,
    /// Idle-listen slots by cell kind: [minimal, autonomous rx, negotiated,
    /// temporary, other].
    pub idle_by_kind: [u64; 5],
    /// Negotiated schedule entries still installed at the end of the run.
    pub standing_negotiated: u32,
    /// Debug: data drops by path.
    pub drop_paths: [u64; 9],
}

impl RunOutput {
    pub fn nodes_csv(&self) -> String {
        metrics::nodes_csv(&self.config, &self.nodes)
    }

    pub fn packets_csv(&self) -> String {
        metrics::packets_csv(&self.config, &self.packets)
    }

    pub fn mean_join_time_s(&self) -> Option<f64> {
        let joins: Vec<f64> = self.nodes.iter().filter_map(|n| n.t_join_s).collect();
        if joins.is_empty() {
            None
        } else {
            Some(joins.iter().sum::<f64>() / joins.len() as f64)
        }
    }
}

/// One simulated network advancing slot by slot.
pub struct Simulation {
    cfg: ScenarioConfig,
    topology: Topology,
    nodes: Vec<NodeRuntime>,
    energy: Vec<EnergyLedger>,
    synced_slots: Vec<u64>,
    medium_rngs: Vec<ChaCha8Rng>,
    charge_table: ChargeTable,
    trace: Trace,
    ledger: DataLedger,
    asn: Asn,
    total_slots: u64,
    idle_by_kind: [u64; 5],
    /// First ASN at which each node's uplink edge looked stale; must heal
    /// within the Dis_join window or it is flagged.
    stale_since: Vec<Option<Asn>>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Simulation, SimError> {
        cfg.validate()?;
        let hub = RngHub::new(cfg.rng_seed);
        let mut topo_rng = hub.stream(0, Purpose::Topology);
        let topology = Topology::generate(cfg.n_nodes, cfg.radio_params(), cfg.rng_seed, &mut topo_rng)?;
        let n = usize::from(cfg.n_nodes);
        let nodes: Vec<NodeRuntime> = topology
            .ids()
            .iter()
            .enumerate()
            .map(|(i, &id)| NodeRuntime::new(id, i == 0, &hub, &cfg))
            .collect();
        let medium_rngs = (0..cfg.n_nodes)
            .map(|i| hub.stream(i, Purpose::Medium))
            .collect();
        let charge_table = cfg.charge_table()?;
        let total_slots = cfg.total_slots();
        Ok(Simulation {
            ledger: DataLedger::new(n),
            energy: vec![EnergyLedger::default(); n],
            synced_slots: vec![0; n],
            stale_since: vec![None; n],
            medium_rngs,
            charge_table,
            trace: Trace::default(),
            nodes,
            topology,
            asn: Asn(0),
            total_slots,
            idle_by_kind: [0; 5],
            cfg,
        })
    }

    /// Convenience: build, run to the configured duration, finalize.
    pub fn run(cfg: ScenarioConfig) -> Result<RunOutput, SimError> {
        let mut sim = Simulation::new(cfg)?;
        while sim.asn.0 < sim.total_slots {
            sim.step();
        }
        Ok(sim.finish())
    }

    pub fn asn(&self) -> Asn {
        self.asn
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }


    /// Advances the network by exactly one slot.
    pub fn step(&mut self) {
        let now = self.asn;
        let n = self.nodes.len();
        let ctx = make_ctx(&self.cfg);

        // Phase 1: timers and deadline expiries (per node, independent).
        for i in 0..n {
            let mut sinks = SimSinks {
                trace: &mut self.trace,
                ledger: &mut self.ledger,
            };
            self.nodes[i].phase_timers(now, &ctx, &mut sinks);
        }

        // Phase 2: per-node radio decision for this slot.
        let mut plans: Vec<RadioPlan> = Vec::with_capacity(n);
        let mut pledge_at_plan: Vec<bool> = Vec::with_capacity(n);
        for i in 0..n {
            let mut sinks = SimSinks {
                trace: &mut self.trace,
                ledger: &mut self.ledger,
            };
            let pledge = self.nodes[i].status == NodeStatus::Pledge;
            let plan = self.nodes[i].plan_slot(now, &ctx, &mut sinks);
            if matches!(plan, RadioPlan::Tx { .. }) && pledge {
                self.trace
                    .violation(now, format!("pledge node {i} attempted to transmit"));
            }
            plans.push(plan);
            pledge_at_plan.push(pledge);
        }

        // Phase 3: medium resolution.
        let mut intents: Vec<TxIntent> = Vec::new();
        let mut intent_owner: Vec<usize> = Vec::new();
        for (i, plan) in plans.iter().enumerate() {
            if let RadioPlan::Tx { channel, .. } = plan {
                intents.push(TxIntent {
                    sender: i as u16,
                    channel: *channel,
                });
                intent_owner.push(i);
            }
        }
        // Reception handling may mutate receiver state; senders are never
        // receivers in the same slot, so queue indices in plans stay valid.
        let mut acks: Vec<Option<LinkAck>> = vec![None; n];
        let mut listen_outcome: Vec<Option<(bool, bool)>> = vec![None; n]; // (decoded, unicast_for_me)
        for i in 0..n {
            let RadioPlan::Listen { channel, .. } = plans[i] else { continue };
            let outcome = resolve_reception(
                i as u16,
                channel,
                &intents,
                &self.topology,
                &mut self.medium_rngs[i],
            );
            let RxOutcome::Decoded { tx, rssi_dbm } = outcome else {
                listen_outcome[i] = Some((false, false));
                continue;
            };
            let sender = intent_owner[tx];
            let RadioPlan::Tx { queue_idx, dst, .. } = plans[sender] else { unreachable!() };
            let unicast_for_me = dst == Some(self.nodes[i].id);
            if dst.is_some() && !unicast_for_me {
                // Overheard unicast for somebody else: discarded.
                listen_outcome[i] = Some((false, false));
                continue;
            }
            listen_outcome[i] = Some((true, unicast_for_me));
            let pkt = self.nodes[sender].queue.get(queue_idx).cloned();
            let Some(pkt) = pkt else { continue };
            debug_assert!(
                pkt.created <= now,
                "causality: packet delivered before creation"
            );
            let src = self.nodes[sender].id;
            let mut sinks = SimSinks {
                trace: &mut self.trace,
                ledger: &mut self.ledger,
            };
            let ack = self.nodes[i].handle_reception(&pkt, src, rssi_dbm, now, &ctx, &mut sinks);
            if let Some(ack) = ack {
                acks[sender] = Some(ack);
            }
        }

        // Phase 4: settle transmissions and charge energy. Desynchronized
        // (pledge-planned) slots draw nothing.
        let table = self.charge_table;
        for i in 0..n {
            let charged: Option<EnergyState> = match plans[i] {
                RadioPlan::Off => None,
                RadioPlan::Sleep => Some(EnergyState::Sleep),
                RadioPlan::Listen { cell, .. } => {
                    if pledge_at_plan[i] {
                        None
                    } else {
                        let state = match listen_outcome[i] {
                            Some((true, true)) => EnergyState::RxDataTxAck,
                            Some((true, false)) => EnergyState::RxData,
                            _ => EnergyState::IdleListen,
                        };
                        if state == EnergyState::IdleListen {
                            let bucket = match cell {
                                Some(crate::model::CellKind::Minimal) => 0,
                                Some(crate::model::CellKind::AutonomousRx) => 1,
                                Some(crate::model::CellKind::Negotiated) => 2,
                                Some(crate::model::CellKind::TemporaryDio) => 3,
                                _ => 4,
                            };
                            self.idle_by_kind[bucket] += 1;
                        }
                        Some(state)
                    }
                }
                RadioPlan::Tx {
                    queue_idx,
                    dst,
                    contention,
                    backoff_key,
                    dedicated,
                    ..
                } => {
                    let mut sinks = SimSinks {
                        trace: &mut self.trace,
                        ledger: &mut self.ledger,
                    };
                    if dst.is_none() {
                        // Broadcast: fire and forget, no backoff feedback.
                        self.nodes[i].apply_tx_success(
                            queue_idx, None, backoff_key, false, false, now, &ctx, &mut sinks,
                        );
                        Some(EnergyState::TxData)
                    } else if let Some(ack) = acks[i].take() {
                        self.nodes[i].apply_tx_success(
                            queue_idx,
                            Some(&ack),
                            backoff_key,
                            contention,
                            dedicated,
                            now,
                            &ctx,
                            &mut sinks,
                        );
                        Some(EnergyState::TxDataRxAck)
                    } else {
                        self.nodes[i].apply_tx_failure(
                            queue_idx, backoff_key, contention, dedicated, now, &ctx, &mut sinks,
                        );
                        Some(EnergyState::TxData)
                    }
                }
            };
            if let Some(state) = charged {
                if !pledge_at_plan[i] {
                    self.energy[i].tally(state, &table);
                    self.synced_slots[i] += 1;
                }
            }
        }

        // Per-frame invariant sweep.
        if now.slot_offset(self.cfg.slotframe_length) == self.cfg.slotframe_length - 1 {
            self.check_frame_invariants(now);
        }

        self.asn = self.asn.next();
    }

    /// Routing sanity per frame. Rank monotonicity is asserted against the
    /// advertisement each node actually adopted (that is what builds the
    /// path); loops and dead uplinks, which lossy churn can create
    /// transiently, must dissolve within the Dis_join repair window.
    fn check_frame_invariants(&mut self, now: Asn) {
        let dy_sync_slots = (self.cfg.dy_sync_seconds / self.cfg.slot_duration_s) as u64;
        let dis_join_slots = (self.cfg.dis_join_seconds / self.cfg.slot_duration_s) as u64;
        // Worst-case honest repair: silent-parent detection (Dy_sync) at one
        // level plus link-failure detection below it.
        let grace = dy_sync_slots + dis_join_slots + 4 * u64::from(self.cfg.slotframe_length);
        let n = self.nodes.len();
        for i in 0..n {
            let node = &self.nodes[i];
            if node.queue.len() > node.queue.capacity() {
                self.trace
                    .violation(now, format!("node {i}: queue exceeded capacity"));
            }
            if node.status != NodeStatus::Joined || node.is_root {
                self.stale_since[i] = None;
                continue;
            }
            // Monotonicity against the adopted advertisement.
            if let Some(view) = node.parent_rank_view() {
                if node.rank <= view {
                    self.trace.violation(
                        now,
                        format!("node {i}: rank {} not above its parent's advertised rank {view}", node.rank),
                    );
                }
            }
            // Edge-level obligation: this node's own uplink must point at a
            // joined parent (it is the child's duty to notice otherwise
            // within its detection windows), and following parent edges must
            // never cycle. Ancestors' rejoin latency is performance, not an
            // invariant breach.
            let healthy = match node.parent {
                None => false,
                Some(parent) => {
                    let p = &self.nodes[usize::from(parent.index)];
                    let edge_ok = p.status == NodeStatus::Joined;
                    let mut cycle = false;
                    let mut cur = i;
                    let mut steps = 0;
                    while let Some(next) = self.nodes[cur].parent {
                        if self.nodes[cur].status != NodeStatus::Joined {
                            break;
                        }
                        cur = usize::from(next.index);
                        if cur == i {
                            cycle = true;
                            break;
                        }
                        steps += 1;
                        if steps > n {
                            cycle = true;
                            break;
                        }
                    }
                    edge_ok && !cycle
                }
            };
            if healthy {
                self.stale_since[i] = None;
            } else {
                let since = *self.stale_since[i].get_or_insert(now);
                if now.0 - since.0 > grace {
                    let detail = match node.parent {
                        None => "no parent".to_string(),
                        Some(p) => format!(
                            "parent {} status {:?}",
                            p.index,
                            self.nodes[usize::from(p.index)].status
                        ),
                    };
                    self.trace.violation(
                        now,
                        format!(
                            "node {i}: uplink chain broken or looping past the repair window ({detail})"
                        ),
                    );
                    self.stale_since[i] = Some(now);
                }
            }
        }
    }

    /// End-of-run settlement: energy conservation, accounting closure, and
    /// metric assembly.
    pub fn finish(mut self) -> RunOutput {
        let now = self.asn;
        let duration_s = self.total_slots as f64 * self.cfg.slot_duration_s;

        // Accounting closure: generated = delivered + still queued + dropped.
        let mut in_queue = vec![0u64; self.nodes.len()];
        for node in &self.nodes {
            for pkt in node.queue.iter() {
                if let PacketKind::Data { origin, .. } = &pkt.kind {
                    in_queue[usize::from(origin.index)] += 1;
                }
            }
        }
        for i in 0..self.nodes.len() {
            let generated = self.ledger.generated[i];
            let settled = self.ledger.delivered[i] + self.ledger.dropped[i] + in_queue[i];
            if generated != settled {
                self.trace.violation(
                    now,
                    format!(
                        "accounting closure broken for origin {i}: generated {generated} != delivered+dropped+queued {settled}"
                    ),
                );
            }
        }

        let mut nodes_out = Vec::with_capacity(self.nodes.len());
        let mut charge_total = 0.0;
        for (i, node) in self.nodes.iter().enumerate() {
            let ledger = &self.energy[i];
            if ledger.online_deci_uc() != ledger.settle_deci_uc(&self.charge_table) {
                self.trace.violation(
                    now,
                    format!("node {i}: online charge accumulator diverges from settled counters"),
                );
            }
            if ledger.total_slots() != self.synced_slots[i] {
                self.trace.violation(
                    now,
                    format!("node {i}: energy counters do not cover every synchronized slot"),
                );
            }
            let charge_uc = ledger.settle_charge(&self.charge_table);
            charge_total += charge_uc;
            let avg_current_ua = charge_uc / duration_s;
            let mut state_slots = [0u64; 6];
            for st in crate::mac::ENERGY_STATES {
                state_slots[st.index()] = ledger.count(st);
            }
            let cells_tx_parent = node.parent.map_or(0, |p| {
                node.schedule
                    .iter_entries()
                    .filter(|e| {
                        e.kind == crate::model::CellKind::Negotiated
                            && e.option == crate::model::CellOption::Tx
                            && e.neighbor == Some(p)
                    })
                    .count() as u16
            });
            let cells_rx_children = node
                .schedule
                .iter_entries()
                .filter(|e| {
                    e.kind == crate::model::CellKind::Negotiated
                        && e.option == crate::model::CellOption::Rx
                })
                .count() as u16;
            nodes_out.push(NodeMetrics {
                state_slots,
                cells_tx_parent,
                cells_rx_children,
                queue_backlog: node.queue.len() as u16,
                depth: None,
                node: node.id.index,
                t_sync_s: node.t_sync.map(|a| a.to_seconds(self.cfg.slot_duration_s)),
                t_join_s: node.t_join.map(|a| a.to_seconds(self.cfg.slot_duration_s)),
                charge_uc,
                avg_current_ua,
                lifetime_years: metrics::lifetime_years(avg_current_ua, self.cfg.battery_capacity_uah),
                tx_frames: node.counters.tx_frames,
                rx_frames: node.counters.rx_frames,
                eb_sent: node.counters.eb_sent,
                drops: node.counters.drops,
                parent_switches: node.counters.parent_switches,
                illegal_status_events: node.counters.illegal_status_events,
            });
        }

        // Latency records ordered by (origin, packet order); jitter over the
        // delivered subsequence.
        let mut packets = Vec::new();
        for (origin, samples) in self.ledger.deliveries.iter_mut().enumerate() {
            samples.sort_unstable_by_key(|&(order, _)| order);
            let mut prev: Option<f64> = None;
            for &(order, latency_slots) in samples.iter() {
                let latency_s = latency_slots as f64 * self.cfg.slot_duration_s;
                if latency_slots == 0 {
                    self.trace.violation(
                        now,
                        format!("origin {origin} order {order}: delivered with zero latency"),
                    );
                }
                packets.push(PacketRecord {
                    origin: origin as u16,
                    order,
                    latency_s,
                    jitter_s: prev.map(|p| (latency_s - p).abs()),
                });
                prev = Some(latency_s);
            }
        }

        let joined_count = self.nodes.iter().filter(|n| n.t_join.is_some()).count() as u32;
        let standing_negotiated = self
            .nodes
            .iter()
            .flat_map(|n| n.schedule.iter_entries())
            .filter(|e| e.kind == crate::model::CellKind::Negotiated)
            .count() as u32;
        RunOutput {
            standing_negotiated,
            idle_by_kind: self.idle_by_kind,
            topology_hash: self.topology.hash64(),
            nodes: nodes_out,
            packets,
            events: self.trace.events,
            violations: self.trace.violations,
            drop_paths: self.ledger.drop_paths,
            generated_data: self.ledger.generated.iter().sum(),
            delivered_data: self.ledger.delivered.iter().sum(),
            dropped_data: self.ledger.dropped.iter().sum(),
            charge_total_uc: charge_total,
            joined_count,
            config: self.cfg,
        }
    }
}

/// Builds the per-slot context from the configuration alone, keeping the
/// borrow disjoint from the node array.
fn make_ctx(cfg: &ScenarioConfig) -> SimCtx<'_> {
    let frame = u64::from(cfg.slotframe_length);
    SimCtx {
        cfg,
        frame_len: cfg.slotframe_length,
        l_length: max_injected_list_length(cfg.slotframe_length).unwrap_or(0),
        dy_sync_slots: (cfg.dy_sync_seconds / cfg.slot_duration_s) as u64,
        dis_join_slots: (cfg.dis_join_seconds / cfg.slot_duration_s) as u64,
        dao_period_slots: (cfg.dao_period_seconds / cfg.slot_duration_s) as u64,
        eb_period_slots: cfg.eb_period_slotframes * frame,
        app_period_slots: (cfg.app_period_seconds / cfg.slot_duration_s) as u64,
        t_lock_slots: cfg.t_lock_slotframes * frame,
        cooldown_slots: cfg.reserve_cooldown_slotframes * frame,
        initial_phase_end: (cfg.initial_phase_minutes * 60.0 / cfg.slot_duration_s) as u64,
        dio_ext_capacity: cfg.dio_extension_capacity(),
        dao_ext_capacity: cfg.dao_extension_capacity(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(mode: StackMode) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.n_nodes = 2;
        cfg.duration_minutes = 0.5;
        cfg.app_period_seconds = 5.0;
        cfg.area_m = 30.0;
        // Desk-scale bring-up: beacon every slotframe over two channels and
        // skip the secure handshake so the pair settles within seconds.
        cfg.eb_period_slotframes = 1;
        cfg.nb_channels = 2;
        cfg.secure_joining = false;
        cfg.stack_mode = mode;
        cfg.rng_seed = 4;
        cfg
    }

    #[test]
    fn two_node_pb_run_joins_the_leaf() {
        let out = Simulation::run(tiny_cfg(StackMode::Pb)).unwrap();
        assert!(out.violations.is_empty(), "violations: {:?}", out.violations);
        assert_eq!(out.joined_count, 2, "leaf must join within 30 s");
        let leaf = &out.nodes[1];
        assert!(leaf.t_sync_s.is_some());
        assert!(leaf.t_join_s.unwrap() >= leaf.t_sync_s.unwrap());
    }

    #[test]
    fn two_node_msf_run_joins_the_leaf() {
        let out = Simulation::run(tiny_cfg(StackMode::Msf)).unwrap();
        assert!(out.violations.is_empty(), "violations: {:?}", out.violations);
        assert_eq!(out.joined_count, 2);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = Simulation::run(tiny_cfg(StackMode::Pb)).unwrap();
        let b = Simulation::run(tiny_cfg(StackMode::Pb)).unwrap();
        assert_eq!(a.nodes_csv(), b.nodes_csv());
        assert_eq!(a.packets_csv(), b.packets_csv());
    }

    #[test]
    fn slot_count_matches_duration() {
        let mut cfg = tiny_cfg(StackMode::Msf);
        cfg.duration_minutes = 30.0;
        assert_eq!(cfg.total_slots(), 180_000);
    }
}
