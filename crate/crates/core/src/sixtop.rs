//! 6P transactions (2-step and 3-step ADD, DELETE) with cell locking, the
//! MSF traffic-adaptation rule, and the closed-form first-attempt
//! reservation success probability.

use crate::model::{Asn, CellCoord, NodeId};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SixpKind {
    /// Requester proposes the cells; two control packets.
    TwoStep,
    /// Responder proposes; three control packets.
    ThreeStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SixpCommandKind {
    Add,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SixpState {
    AwaitingResponse,
    AwaitingConfirmation,
    Done,
    TimedOut,
}

/// Why a transaction was opened; the PB emission rule is checked against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SixpReason {
    /// MSF join / parent switch, or the PB zero-grant fallback.
    JoinOrSwitch,
    /// PB early reservation under queue pressure.
    QueuePressure,
    /// MSF usage-window adaptation.
    TrafficAdapt,
}

/// One in-flight 6P transaction, owned by the requester. At most one per
/// (node, neighbor) pair.
#[derive(Debug, Clone)]
pub struct SixpTransaction {
    pub requester: NodeId,
    pub responder: NodeId,
    pub kind: SixpKind,
    pub command: SixpCommandKind,
    pub reason: SixpReason,
    pub num_cells: u8,
    /// Cells locked at whichever side proposed them.
    pub proposed: Vec<CellCoord>,
    pub state: SixpState,
    pub lock_deadline: Asn,
    pub seqnum: u32,
}

/// Uniformly samples `k` distinct proposal cells from the free slots, with
/// uniformly random channel offsets. `None` when fewer than `k` slots are
/// free (the transaction aborts without taking any lock).
pub fn sample_proposal<R: Rng>(
    free: &[u16],
    k: usize,
    nb_channels: u16,
    rng: &mut R,
) -> Option<Vec<CellCoord>> {
    if free.len() < k {
        return None;
    }
    let mut slots: Vec<u16> = free.to_vec();
    slots.shuffle(rng);
    slots.truncate(k);
    Some(
        slots
            .into_iter()
            .map(|s| CellCoord::new(s, rng.gen_range(0..nb_channels)))
            .collect(),
    )
}

/// Responder side of an ADD: keep the proposed cells that are still free
/// here, then pick up to `num_cells` of them uniformly. An empty grant is a
/// valid outcome.
pub fn select_grant<R: Rng>(
    proposed: &[CellCoord],
    responder_free: &[u16],
    num_cells: usize,
    rng: &mut R,
) -> Vec<CellCoord> {
    let mut viable: Vec<CellCoord> = proposed
        .iter()
        .copied()
        .filter(|c| responder_free.contains(&c.slot_offset))
        .collect();
    viable.shuffle(rng);
    viable.truncate(num_cells);
    viable
}

/// Probability that at least one of `k` proposed cells is free at both
/// sides, with `f_a`/`f_b` free cells out of `c` slots each.
pub fn first_attempt_success_probability(f_a: f64, f_b: f64, c: f64, k: u32) -> f64 {
    debug_assert!(c >= 1.0 && (0.0..=c).contains(&f_a) && (0.0..=c).contains(&f_b));
    let p_cell = (f_a / c) * (f_b / c);
    1.0 - (1.0 - p_cell).powi(k as i32)
}

/// MSF adaptation decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptCommand {
    AddOne,
    DeleteOne,
}

/// Usage bookkeeping over a window of negotiated-cell occurrences toward
/// one neighbor.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellUsageWindow {
    elapsed: u32,
    used: u32,
}

impl CellUsageWindow {
    /// Records one elapsed cell occurrence and, once the window is full,
    /// returns the adaptation verdict and resets. A single negotiated cell
    /// is the floor: deletion is only suggested above it.
    pub fn observe(
        &mut self,
        used: bool,
        window: u32,
        hi: f64,
        lo: f64,
        negotiated_cells: u16,
    ) -> Option<AdaptCommand> {
        self.elapsed += 1;
        if used {
            self.used += 1;
        }
        if self.elapsed < window {
            return None;
        }
        let ratio = f64::from(self.used) / f64::from(self.elapsed);
        self.elapsed = 0;
        self.used = 0;
        if ratio > hi {
            Some(AdaptCommand::AddOne)
        } else if ratio < lo && negotiated_cells > 1 {
            Some(AdaptCommand::DeleteOne)
        } else {
            None
        }
    }

    pub fn reset(&mut self) {
        self.elapsed = 0;
        self.used = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probability_edge_cases() {
        assert_eq!(first_attempt_success_probability(100.0, 100.0, 100.0, 5), 1.0);
        assert_eq!(first_attempt_success_probability(0.0, 60.0, 100.0, 5), 0.0);
        let p = first_attempt_success_probability(50.0, 50.0, 100.0, 5);
        assert!((p - 0.7627).abs() < 1e-4, "got {p}");
    }

    #[test]
    fn proposal_needs_k_free_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_proposal(&[3, 9, 17], 5, 16, &mut rng).is_none());
        let free: Vec<u16> = (1..60).collect();
        let cells = sample_proposal(&free, 5, 16, &mut rng).unwrap();
        assert_eq!(cells.len(), 5);
        let mut slots: Vec<u16> = cells.iter().map(|c| c.slot_offset).collect();
        slots.sort_unstable();
        slots.dedup();
        assert_eq!(slots.len(), 5, "proposal slots must be distinct");
        assert!(cells.iter().all(|c| free.contains(&c.slot_offset)));
        assert!(cells.iter().all(|c| c.channel_offset < 16));
    }

    #[test]
    fn grant_is_intersection_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let proposed: Vec<CellCoord> = [3u16, 7, 20, 41, 66]
            .iter()
            .map(|&s| CellCoord::new(s, 2))
            .collect();
        let grant = select_grant(&proposed, &[7, 41, 90], 5, &mut rng);
        let mut slots: Vec<u16> = grant.iter().map(|c| c.slot_offset).collect();
        slots.sort_unstable();
        assert_eq!(slots, vec![7, 41]);

        assert!(select_grant(&proposed, &[1, 2], 5, &mut rng).is_empty());
        assert_eq!(select_grant(&proposed, &[7, 41, 90], 1, &mut rng).len(), 1);
    }

    #[test]
    fn usage_window_thresholds() {
        let mut w = CellUsageWindow::default();
        // Saturated usage: Add after a full window.
        let mut verdict = None;
        for _ in 0..64 {
            verdict = w.observe(true, 64, 0.75, 0.25, 1);
        }
        assert_eq!(verdict, Some(AdaptCommand::AddOne));

        // Idle usage with one cell: floor keeps it.
        let mut verdict = None;
        for _ in 0..64 {
            verdict = w.observe(false, 64, 0.75, 0.25, 1);
        }
        assert_eq!(verdict, None);

        // Idle usage with two cells: Delete.
        let mut verdict = None;
        for _ in 0..64 {
            verdict = w.observe(false, 64, 0.75, 0.25, 2);
        }
        assert_eq!(verdict, Some(AdaptCommand::DeleteOne));

        // Half usage sits between the thresholds.
        let mut verdict = None;
        for i in 0..64 {
            verdict = w.observe(i % 2 == 0, 64, 0.75, 0.25, 2);
        }
        assert_eq!(verdict, None);
    }

    proptest! {
        // Eq.-style closed form is monotone in each argument.
        #[test]
        fn probability_monotone(fa in 0u32..=100, fb in 0u32..=100, k in 1u32..=10) {
            let p = first_attempt_success_probability(f64::from(fa), f64::from(fb), 100.0, k);
            prop_assert!((0.0..=1.0).contains(&p));
            if fa < 100 {
                let up = first_attempt_success_probability(f64::from(fa + 1), f64::from(fb), 100.0, k);
                prop_assert!(up >= p);
            }
            if fb < 100 {
                let up = first_attempt_success_probability(f64::from(fa), f64::from(fb + 1), 100.0, k);
                prop_assert!(up >= p);
            }
            let up = first_attempt_success_probability(f64::from(fa), f64::from(fb), 100.0, k + 1);
            prop_assert!(up >= p);
        }
    }
}
