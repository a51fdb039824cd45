//! RPL pieces: OF0 rank arithmetic, the Trickle timer, and the neighbor
//! table fed by DIO reception.

use crate::model::{Asn, NodeId};
use rand::Rng;

/// Rank of the DAG root under OF0.
pub const ROOT_RANK: u32 = 256;
/// Default OF0 rank increment per hop.
pub const DEFAULT_RANK_STEP: u32 = 256;

/// OF0 rank through a parent: `parent_rank + step`, optionally stretched
/// when the link is poor (off by default; `link_quality` is a PDR estimate
/// in [0, 1]).
pub fn compute_rank_of0(parent_rank: u32, step: u32, link_quality: f64, stretch: bool) -> u32 {
    let step = if stretch {
        let penalty = ((1.0 - link_quality.clamp(0.0, 1.0)) * f64::from(step) / 2.0).round() as u32;
        step + penalty
    } else {
        step
    };
    parent_rank.saturating_add(step)
}

/// What a node knows about one neighbor, refreshed by every decoded packet.
#[derive(Debug, Clone)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub rank: u32,
    pub last_heard: Asn,
    /// Exponentially weighted delivery estimate of the link.
    pub link_quality: f64,
    /// Free slots the neighbor advertised in its last DIO (PB mode only).
    pub advertised_free: Option<Vec<u16>>,
    /// Temporary DAO slots the neighbor proposed (PB mode only), with their
    /// expiry at the advertiser.
    pub advertised_proposed: Option<Vec<u16>>,
    pub proposal_expiry: Asn,
}

impl NeighborEntry {
    pub fn new(id: NodeId, rank: u32, now: Asn, initial_quality: f64) -> NeighborEntry {
        NeighborEntry {
            id,
            rank,
            last_heard: now,
            link_quality: initial_quality,
            advertised_free: None,
            advertised_proposed: None,
            proposal_expiry: Asn(0),
        }
    }

    /// Delivery/loss evidence from dedicated-cell transmissions.
    pub fn update_quality(&mut self, delivered: bool) {
        const ALPHA: f64 = 0.1;
        let sample = if delivered { 1.0 } else { 0.0 };
        self.link_quality = (1.0 - ALPHA) * self.link_quality + ALPHA * sample;
    }

    /// RSSI measured on a decoded frame maps straight onto the expected
    /// delivery ratio of the link.
    pub fn observe_rssi(&mut self, rssi_dbm: f64) {
        const ALPHA: f64 = 0.25;
        let sample = crate::radio::pdr_of(rssi_dbm);
        self.link_quality = (1.0 - ALPHA) * self.link_quality + ALPHA * sample;
    }

    /// Proposed slots still valid at `now`.
    pub fn live_proposed(&self, now: Asn) -> &[u16] {
        match &self.advertised_proposed {
            Some(slots) if self.proposal_expiry > now => slots,
            _ => &[],
        }
    }
}

/// Minimum-rank parent candidate among the neighbors, honoring strict-rank
/// hysteresis against the current parent. Descendants can never win: their
/// rank sits above ours by the rank rule.
pub fn select_parent_msf(
    neighbors: &[NeighborEntry],
    current_parent: Option<NodeId>,
    current_parent_rank: Option<u32>,
) -> Option<NodeId> {
    let best = neighbors.iter().min_by_key(|n| (n.rank, n.id.index))?;
    match (current_parent, current_parent_rank) {
        (Some(parent), Some(rank)) => {
            if best.id != parent && best.rank < rank {
                Some(best.id)
            } else {
                None
            }
        }
        _ => Some(best.id),
    }
}

/// Trickle timer driving DIO emission (RFC 6206 shape): the interval
/// doubles up to `i_min * 2^doublings` while the network is consistent and
/// snaps back to `i_min` on inconsistency; a transmission fires at a random
/// point in the second half of the interval unless suppressed by
/// redundancy.
#[derive(Debug, Clone)]
pub struct TrickleState {
    i_min_slots: u64,
    max_doublings: u32,
    redundancy_k: u32,
    interval_slots: u64,
    interval_end: Asn,
    fire_at: Asn,
    fired: bool,
    redundancy_counter: u32,
    /// Set by an inconsistency reset: the next firing skips suppression so
    /// the inconsistency propagates.
    force_next: bool,
}

/// What the timer asks the node to do at a given slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrickleAction {
    Transmit,
}

impl TrickleState {
    pub fn new(i_min_slots: u64, max_doublings: u32, redundancy_k: u32) -> TrickleState {
        TrickleState {
            i_min_slots: i_min_slots.max(1),
            max_doublings,
            redundancy_k,
            interval_slots: 0,
            interval_end: Asn(0),
            fire_at: Asn(0),
            fired: true,
            redundancy_counter: 0,
            force_next: false,
        }
    }

    pub fn interval_slots(&self) -> u64 {
        self.interval_slots
    }

    pub fn max_interval_slots(&self) -> u64 {
        self.i_min_slots << self.max_doublings
    }

    /// Starts (or restarts) with the smallest interval.
    pub fn start<R: Rng>(&mut self, now: Asn, rng: &mut R) {
        self.interval_slots = self.i_min_slots;
        self.begin_interval(now, rng);
    }

    fn begin_interval<R: Rng>(&mut self, now: Asn, rng: &mut R) {
        let half = self.interval_slots / 2;
        let t = rng.gen_range(half..self.interval_slots.max(half + 1));
        self.fire_at = Asn(now.0 + t);
        self.interval_end = Asn(now.0 + self.interval_slots);
        self.fired = false;
        self.redundancy_counter = 0;
    }

    /// Counts a consistent (same-DODAG DIO) reception toward suppression.
    pub fn heard_consistent(&mut self) {
        self.redundancy_counter += 1;
    }

    /// Inconsistency (e.g. a broadcast DIS or an own-rank change): snap back
    /// to the minimum interval and make sure the news actually goes out.
    pub fn reset_inconsistent<R: Rng>(&mut self, now: Asn, rng: &mut R) {
        if self.interval_slots != self.i_min_slots {
            self.interval_slots = self.i_min_slots;
            self.begin_interval(now, rng);
        }
        self.force_next = true;
    }

    /// Advances the timer by one slot; may request a transmission.
    pub fn tick<R: Rng>(&mut self, now: Asn, rng: &mut R) -> Option<TrickleAction> {
        if self.interval_slots == 0 {
            return None;
        }
        let mut action = None;
        if !self.fired && now >= self.fire_at {
            self.fired = true;
            if self.force_next || self.redundancy_counter < self.redundancy_k {
                self.force_next = false;
                action = Some(TrickleAction::Transmit);
            }
        }
        if now >= self.interval_end {
            self.interval_slots = (self.interval_slots * 2).min(self.max_interval_slots());
            self.begin_interval(now, rng);
        }
        action
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn of0_rank_chain() {
        assert_eq!(compute_rank_of0(ROOT_RANK, 256, 1.0, false), 512);
        let mut rank = ROOT_RANK;
        for _ in 0..3 {
            rank = compute_rank_of0(rank, 256, 1.0, false);
        }
        assert_eq!(rank, 1024);
    }

    #[test]
    fn of0_stretch_penalizes_poor_links() {
        let clean = compute_rank_of0(256, 256, 1.0, true);
        let poor = compute_rank_of0(256, 256, 0.2, true);
        assert_eq!(clean, 512);
        assert!(poor > clean);
    }

    fn neighbor(index: u16, rank: u32) -> NeighborEntry {
        NeighborEntry::new(NodeId::derive(index, 1), rank, Asn(0), 1.0)
    }

    #[test]
    fn parent_selection_prefers_min_rank() {
        let neighbors = vec![neighbor(1, 768), neighbor(2, 512)];
        let parent = select_parent_msf(&neighbors, None, None).unwrap();
        assert_eq!(parent.index, 2);
    }

    #[test]
    fn parent_selection_hysteresis_is_strict() {
        let neighbors = vec![neighbor(1, 512)];
        let current = NodeId::derive(2, 1);
        // Equal rank: no switch.
        assert!(select_parent_msf(&neighbors, Some(current), Some(512)).is_none());
        // Strictly better: switch.
        assert_eq!(
            select_parent_msf(&neighbors, Some(current), Some(768)).unwrap().index,
            1
        );
    }

    #[test]
    fn trickle_interval_doubles_and_resets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = TrickleState::new(100, 3, 1);
        t.start(Asn(0), &mut rng);
        assert_eq!(t.interval_slots(), 100);

        let mut asn = Asn(0);
        let mut intervals = vec![t.interval_slots()];
        // 100 -> 200 -> 400 -> 800 (the cap at 3 doublings), then steady.
        for _ in 0..5000 {
            asn = asn.next();
            t.tick(asn, &mut rng);
            if *intervals.last().unwrap() != t.interval_slots() {
                intervals.push(t.interval_slots());
            }
        }
        assert_eq!(intervals, vec![100, 200, 400, 800]);
        assert!(t.interval_slots() <= t.max_interval_slots());

        t.reset_inconsistent(asn, &mut rng);
        assert_eq!(t.interval_slots(), 100);
    }

    #[test]
    fn trickle_suppression_honors_redundancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = TrickleState::new(50, 2, 1);
        t.start(Asn(0), &mut rng);
        t.heard_consistent();
        let mut fired = false;
        for i in 1..=50 {
            if t.tick(Asn(i), &mut rng) == Some(TrickleAction::Transmit) {
                fired = true;
            }
        }
        assert!(!fired, "redundancy counter >= k must suppress");
    }

    #[test]
    fn trickle_fires_in_second_half_when_quiet() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut t = TrickleState::new(64, 2, 1);
            t.start(Asn(0), &mut rng);
            let mut fired_at = None;
            for i in 1..=64 {
                if t.tick(Asn(i), &mut rng) == Some(TrickleAction::Transmit) {
                    fired_at = Some(i);
                    break;
                }
            }
            let at = fired_at.expect("quiet interval must fire");
            assert!((32..64).contains(&at), "fired at {at}");
        }
    }

    #[test]
    fn neighbor_proposed_slots_expire() {
        let mut n = neighbor(1, 512);
        n.advertised_proposed = Some(vec![5, 9]);
        n.proposal_expiry = Asn(100);
        assert_eq!(n.live_proposed(Asn(99)), &[5, 9]);
        assert!(n.live_proposed(Asn(100)).is_empty());
    }
}
