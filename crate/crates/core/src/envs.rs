//! Deterministic tabular MDPs with known symmetry structure.
//!
//! * `passage`: a directed n-cycle with left/right moves.
//! * `torus`: the product of two n-cycles, one generator per factor.
//! * `grid_orient`: an n x n grid with heading, actions forward and turn-right.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How forward moves into a wall are treated in `grid_orient`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallMode {
    /// The move is a valid self-loop transition.
    #[default]
    Selfloop,
    /// The move stays a self-loop in the table but is not a valid pair.
    Exclude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    name: String,
    n_states: usize,
    n_actions: usize,
    next_state: Vec<usize>,
    reward: Vec<f64>,
    valid: Vec<bool>,
    gamma: f64,
    terminal: Vec<bool>,
    initial_states: Vec<usize>,
    encodings: Vec<Vec<f64>>,
    action_names: Vec<&'static str>,
    label_names: Vec<&'static str>,
    labels: Vec<Vec<i64>>,
}

/// One experience tuple `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Partition of the valid `(s, a)` pairs into training and held-out sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_pairs: BTreeSet<(usize, usize)>,
    pub heldout_pairs: BTreeSet<(usize, usize)>,
    pub seed: u64,
}

pub const ORIENTATIONS: [&str; 4] = ["N", "E", "S", "W"];

impl TabularMdp {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn encoding_dim(&self) -> usize {
        self.encodings[0].len()
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next_state[s * self.n_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial_states
    }

    pub fn action_names(&self) -> &[&'static str] {
        &self.action_names
    }

    pub fn label_names(&self) -> &[&'static str] {
        &self.label_names
    }

    pub fn label(&self, s: usize) -> &[i64] {
        &self.labels[s]
    }

    /// 0/1 encoding of state `s`.
    pub fn encode(&self, s: usize) -> &[f64] {
        &self.encodings[s]
    }

    /// Whether `(s, a)` is a transition the agent may take.
    pub fn is_valid_pair(&self, s: usize, a: usize) -> bool {
        !self.terminal[s] && self.valid[s * self.n_actions + a]
    }

    /// All valid pairs in `(s, a)` order.
    pub fn valid_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n_states)
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .filter(|&(s, a)| self.is_valid_pair(s, a))
            .collect()
    }

    pub fn record(&self, s: usize, a: usize) -> TransitionRecord {
        TransitionRecord {
            s,
            a,
            r: self.reward(s, a),
            s_next: self.next_state(s, a),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Turn the MDP into a goal-reaching task: reward -1 on every step, goal
    /// states terminal, every other state a possible start.
    pub fn with_goal(mut self, goal_states: &[usize]) -> Result<Self> {
        if goal_states.is_empty() {
            return Err(Error::invalid("goal set is empty"));
        }
        if let Some(&g) = goal_states.iter().find(|&&g| g >= self.n_states) {
            return Err(Error::invalid(format!("goal state {g} out of range")));
        }
        for &g in goal_states {
            self.terminal[g] = true;
        }
        self.reward.iter_mut().for_each(|r| *r = -1.0);
        self.initial_states = (0..self.n_states).filter(|&s| !self.terminal[s]).collect();
        if self.initial_states.is_empty() {
            return Err(Error::invalid("goal covers every state"));
        }
        self.name = format!("{}-goal", self.name);
        Ok(self)
    }

    /// Fewest steps from `s` to a terminal state, via valid pairs. `None` if unreachable.
    pub fn shortest_path_to_goal(&self, s: usize) -> Option<usize> {
        // reverse BFS from terminal states
        let mut dist = vec![usize::MAX; self.n_states];
        let mut queue = VecDeque::new();
        for t in 0..self.n_states {
            if self.terminal[t] {
                dist[t] = 0;
                queue.push_back(t);
            }
        }
        let mut preds = vec![Vec::new(); self.n_states];
        for (p, a) in self.valid_pairs() {
            preds[self.next_state(p, a)].push(p);
        }
        while let Some(u) = queue.pop_front() {
            for &p in &preds[u] {
                if dist[p] == usize::MAX {
                    dist[p] = dist[u] + 1;
                    queue.push_back(p);
                }
            }
        }
        (dist[s] != usize::MAX).then_some(dist[s])
    }

    /// Breadth-first distances from `start` along valid pairs.
    pub fn distances_from(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("visited");
            for a in 0..self.n_actions {
                if !self.is_valid_pair(u, a) {
                    continue;
                }
                let v = self.next_state(u, a);
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

fn one_hot(len: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[i] = 1.0;
    v
}

pub fn make_passage(n: usize) -> Result<TabularMdp> {
    if n < 3 {
        return Err(Error::invalid(format!("passage needs n >= 3, got {n}")));
    }
    let mut next_state = Vec::with_capacity(2 * n);
    for s in 0..n {
        next_state.push((s + 1) % n);
        next_state.push((s + n - 1) % n);
    }
    Ok(TabularMdp {
        name: format!("passage{n}"),
        n_states: n,
        n_actions: 2,
        next_state,
        reward: vec![0.0; 2 * n],
        valid: vec![true; 2 * n],
        gamma: 1.0,
        terminal: vec![false; n],
        initial_states: (0..n).collect(),
        encodings: (0..n).map(|s| one_hot(n, s)).collect(),
        action_names: vec!["right", "left"],
        label_names: vec!["pos"],
        labels: (0..n).map(|s| vec![s as i64]).collect(),
    })
}

/// Index of torus state `(row, col)`.
pub fn torus_state(n: usize, row: usize, col: usize) -> usize {
    row * n + col
}

pub fn make_torus(n: usize) -> Result<TabularMdp> {
    if n < 3 {
        return Err(Error::invalid(format!("torus needs n >= 3, got {n}")));
    }
    let ns = n * n;
    let mut next_state = Vec::with_capacity(2 * ns);
    let mut encodings = Vec::with_capacity(ns);
    let mut labels = Vec::with_capacity(ns);
    for row in 0..n {
        for col in 0..n {
            next_state.push(torus_state(n, (row + 1) % n, col));
            next_state.push(torus_state(n, row, (col + 1) % n));
            let mut enc = one_hot(n, row);
            enc.extend(one_hot(n, col));
            encodings.push(enc);
            labels.push(vec![row as i64, col as i64]);
        }
    }
    Ok(TabularMdp {
        name: format!("torus{n}"),
        n_states: ns,
        n_actions: 2,
        next_state,
        reward: vec![0.0; 2 * ns],
        valid: vec![true; 2 * ns],
        gamma: 1.0,
        terminal: vec![false; ns],
        initial_states: (0..ns).collect(),
        encodings,
        action_names: vec!["row", "col"],
        label_names: vec!["row", "col"],
        labels,
    })
}

/// Index of grid state `(x, y, orientation)`.
pub fn grid_state(n: usize, x: usize, y: usize, orient: usize) -> usize {
    (x * n + y) * 4 + orient
}

pub const GRID_FORWARD: usize = 0;
pub const GRID_TURN_RIGHT: usize = 1;

/// `n x n` grid with heading. Orientation order is N, E, S, W; north is `+y`.
/// With `goal = Some((x, y))`, every orientation at that cell is terminal.
pub fn make_grid_orient(n: usize, goal: Option<(usize, usize)>, wall_mode: WallMode) -> Result<TabularMdp> {
    if n < 2 {
        return Err(Error::invalid(format!("grid needs n >= 2, got {n}")));
    }
    let ns = 4 * n * n;
    let mut next_state = vec![0; 2 * ns];
    let mut valid = vec![true; 2 * ns];
    let mut encodings = vec![Vec::new(); ns];
    let mut labels = vec![Vec::new(); ns];
    for x in 0..n {
        for y in 0..n {
            for o in 0..4 {
                let s = grid_state(n, x, y, o);
                let (dx, dy): (i64, i64) = match o {
                    0 => (0, 1),
                    1 => (1, 0),
                    2 => (0, -1),
                    _ => (-1, 0),
                };
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let inside = (0..n as i64).contains(&nx) && (0..n as i64).contains(&ny);
                next_state[s * 2 + GRID_FORWARD] = if inside {
                    grid_state(n, nx as usize, ny as usize, o)
                } else {
                    s
                };
                if !inside && wall_mode == WallMode::Exclude {
                    valid[s * 2 + GRID_FORWARD] = false;
                }
                next_state[s * 2 + GRID_TURN_RIGHT] = grid_state(n, x, y, (o + 1) % 4);
                let mut enc = one_hot(n, x);
                enc.extend(one_hot(n, y));
                enc.extend(one_hot(4, o));
                encodings[s] = enc;
                labels[s] = vec![x as i64, y as i64, o as i64];
            }
        }
    }
    let mdp = TabularMdp {
        name: format!("grid{n}"),
        n_states: ns,
        n_actions: 2,
        next_state,
        reward: vec![0.0; 2 * ns],
        valid,
        gamma: 1.0,
        terminal: vec![false; ns],
        initial_states: (0..ns).collect(),
        encodings,
        action_names: vec!["forward", "turn_right"],
        label_names: vec!["x", "y", "orientation"],
        labels,
    };
    match goal {
        None => Ok(mdp),
        Some((gx, gy)) => {
            if gx >= n || gy >= n {
                return Err(Error::invalid(format!("goal cell ({gx}, {gy}) outside the grid")));
            }
            let cells: Vec<usize> = (0..4).map(|o| grid_state(n, gx, gy, o)).collect();
            mdp.with_goal(&cells)
        }
    }
}

/// Roll the uniform random policy from uniformly drawn initial states.
pub fn collect_random(mdp: &TabularMdp, episodes: usize, horizon: usize, seed: u64) -> Result<Vec<TransitionRecord>> {
    collect_random_filtered(mdp, episodes, horizon, seed, None)
}

/// As [`collect_random`], but only actions whose pair is in `allowed` are
/// drawn. An episode ends early when no allowed action remains.
pub fn collect_random_filtered(
    mdp: &TabularMdp,
    episodes: usize,
    horizon: usize,
    seed: u64,
    allowed: Option<&BTreeSet<(usize, usize)>>,
) -> Result<Vec<TransitionRecord>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes * horizon);
    let mut choices = Vec::with_capacity(mdp.n_actions);
    for _ in 0..episodes {
        let mut s = mdp.initial_states[rng.gen_range(0..mdp.initial_states.len())];
        for _ in 0..horizon {
            if mdp.is_terminal(s) {
                break;
            }
            choices.clear();
            choices.extend(
                (0..mdp.n_actions)
                    .filter(|&a| mdp.is_valid_pair(s, a) && allowed.map_or(true, |set| set.contains(&(s, a)))),
            );
            let Some(&a) = choices.choose(&mut rng) else { break };
            let rec = mdp.record(s, a);
            out.push(rec);
            s = rec.s_next;
        }
    }
    Ok(out)
}

/// Uniformly partition the valid pairs, holding out `round(frac * total)` of them.
pub fn split_transitions(mdp: &TabularMdp, holdout_frac: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::invalid(format!("holdout_frac must lie in [0, 1), got {holdout_frac}")));
    }
    let mut pairs = mdp.valid_pairs();
    let n_hold = (holdout_frac * pairs.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let heldout_pairs: BTreeSet<_> = pairs[..n_hold].iter().copied().collect();
    let train_pairs: BTreeSet<_> = pairs[n_hold..].iter().copied().collect();
    for a in 0..mdp.n_actions {
        if !train_pairs.iter().any(|&(_, b)| b == a) {
            return Err(Error::invalid(format!(
                "holdout_frac {holdout_frac} leaves no training pair for action {a}"
            )));
        }
    }
    Ok(DatasetSplit {
        train_pairs,
        heldout_pairs,
        seed,
    })
}

pub fn write_dataset_csv(path: impl AsRef<Path>, records: &[TransitionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: impl AsRef<Path>, mdp: &TabularMdp) -> Result<Vec<TransitionRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: TransitionRecord = row?;
        if rec.s >= mdp.n_states || rec.a >= mdp.n_actions || rec.s_next != mdp.next_state(rec.s, rec.a) {
            return Err(Error::Format(format!(
                "{}: record {rec:?} is inconsistent with {}",
                path.display(),
                mdp.name
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn passage_wraps() {
        let m = make_passage(7).unwrap();
        assert_eq!(m.next_state(6, 0), 0);
        assert_eq!(m.next_state(0, 1), 6);
        assert_eq!(m.encoding_dim(), 7);
        let e = m.encode(3);
        assert_eq!(e.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(e[3], 1.0);
        assert!(make_passage(2).is_err());
    }

    #[test]
    fn torus_shape() {
        let m = make_torus(5).unwrap();
        assert_eq!(m.valid_pairs().len(), 50);
        assert_eq!(m.next_state(torus_state(5, 4, 2), 0), torus_state(5, 0, 2));
        assert_eq!(m.encoding_dim(), 10);
        assert!(make_torus(2).is_err());
    }

    #[test]
    fn grid_shape_and_walls() {
        let m = make_grid_orient(3, None, WallMode::Selfloop).unwrap();
        assert_eq!(m.encoding_dim(), 10);
        assert_eq!(m.n_states(), 36);
        let m5 = make_grid_orient(5, None, WallMode::Selfloop).unwrap();
        let s = grid_state(5, 4, 2, 1);
        assert_eq!(m5.next_state(s, GRID_FORWARD), s);
        assert_eq!(m5.valid_pairs().len(), 200);
        let ex = make_grid_orient(5, None, WallMode::Exclude).unwrap();
        assert_eq!(ex.valid_pairs().len(), 180);
        assert!(!ex.is_valid_pair(s, GRID_FORWARD));
        assert!(make_grid_orient(1, None, WallMode::Selfloop).is_err());
    }

    #[test]
    fn grid_turn_has_order_four_and_forward_keeps_heading() {
        let m = make_grid_orient(4, None, WallMode::Selfloop).unwrap();
        for s in 0..m.n_states() {
            let mut t = s;
            for _ in 0..4 {
                t = m.next_state(t, GRID_TURN_RIGHT);
            }
            assert_eq!(t, s);
            let f = m.next_state(s, GRID_FORWARD);
            assert_eq!(m.label(f)[2], m.label(s)[2]);
        }
    }

    #[test]
    fn cyclic_actions_close_orbits() {
        for n in [3, 5, 7] {
            let p = make_passage(n).unwrap();
            let t = make_torus(n).unwrap();
            for m in [&p, &t] {
                for a in 0..2 {
                    for s in 0..m.n_states() {
                        let mut u = s;
                        for _ in 0..n {
                            u = m.next_state(u, a);
                        }
                        assert_eq!(u, s);
                    }
                }
            }
        }
    }

    #[test]
    fn encodings_are_injective() {
        let envs = [
            make_passage(7).unwrap(),
            make_torus(5).unwrap(),
            make_grid_orient(5, None, WallMode::Selfloop).unwrap(),
        ];
        for m in &envs {
            let set: HashSet<Vec<u64>> = (0..m.n_states())
                .map(|s| m.encode(s).iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(set.len(), m.n_states());
        }
    }

    #[test]
    fn collect_counts_and_determinism() {
        let m = make_torus(5).unwrap();
        assert_eq!(collect_random(&m, 1, 5, 3).unwrap().len(), 5);
        assert_eq!(collect_random(&m, 4, 9, 11).unwrap(), collect_random(&m, 4, 9, 11).unwrap());
        assert!(collect_random(&m, 1, 0, 0).is_err());
        for r in collect_random(&m, 3, 20, 1).unwrap() {
            assert_eq!(r.s_next, m.next_state(r.s, r.a));
        }
    }

    #[test]
    fn long_passage_walk_covers_all_pairs() {
        let m = make_passage(7).unwrap();
        let recs = collect_random(&m, 1, 1000, 5).unwrap();
        let seen: HashSet<_> = recs.iter().map(|r| (r.s, r.a)).collect();
        assert_eq!(seen.len(), 14);
    }

    #[test]
    fn split_sizes() {
        let m = make_torus(5).unwrap();
        let sp = split_transitions(&m, 0.10, 4).unwrap();
        assert_eq!(sp.heldout_pairs.len(), 5);
        assert_eq!(sp.train_pairs.len(), 45);
        assert!(sp.train_pairs.is_disjoint(&sp.heldout_pairs));
        let all: BTreeSet<_> = m.valid_pairs().into_iter().collect();
        let union: BTreeSet<_> = sp.train_pairs.union(&sp.heldout_pairs).copied().collect();
        assert_eq!(union, all);
        assert!(split_transitions(&m, 0.0, 4).unwrap().heldout_pairs.is_empty());
        assert_eq!(sp, split_transitions(&m, 0.10, 4).unwrap());
        assert!(split_transitions(&m, 1.0, 4).is_err());
        assert!(split_transitions(&m, 0.99, 4).is_err());
    }

    #[test]
    fn filtered_collection_avoids_heldout_pairs() {
        let m = make_torus(5).unwrap();
        let sp = split_transitions(&m, 0.2, 9).unwrap();
        let recs = collect_random_filtered(&m, 20, 50, 2, Some(&sp.train_pairs)).unwrap();
        assert!(recs.iter().all(|r| !sp.heldout_pairs.contains(&(r.s, r.a))));
    }

    #[test]
    fn goal_variant_rewards_and_terminals() {
        let m = make_grid_orient(3, Some((2, 2)), WallMode::Selfloop).unwrap();
        let g = grid_state(3, 2, 2, 0);
        assert!(m.is_terminal(g));
        assert!(!m.initial_states().contains(&g));
        assert_eq!(m.reward(0, 0), -1.0);
        let recs = collect_random(&m, 10, 50, 0).unwrap();
        assert!(recs.iter().all(|r| !m.is_terminal(r.s)));
        assert_eq!(m.shortest_path_to_goal(g), Some(0));
        // (2,1,N) moves straight into the goal
        assert_eq!(m.shortest_path_to_goal(grid_state(3, 2, 1, 0)), Some(1));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let m = make_torus(3).unwrap();
        let recs = collect_random(&m, 2, 10, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &recs).unwrap();
        assert_eq!(read_dataset_csv(&path, &m).unwrap(), recs);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("s,a,r,s_next"));
    }
}
