//! Synthetic arithmetic chain problems with verifiable per-step ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Arithmetic operator applied at one chain step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn apply(self, value: i64, operand: i64) -> i64 {
        match self {
            Op::Add => value + operand,
            Op::Sub => value - operand,
            Op::Mul => value * operand,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }
}

/// One problem: an initial value and a chain of operations, with the gold
/// intermediate value after every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyProblem {
    pub seed: u64,
    pub initial: i64,
    pub ops: Vec<(Op, i64)>,
    /// Gold value after each step; `intermediates[n]` satisfies the
    /// recurrence `value_n = value_{n-1} op_n operand_n`.
    pub intermediates: Vec<i64>,
    pub final_answer: i64,
}

impl ToyProblem {
    /// Builds a problem from an explicit chain, computing intermediates by
    /// the recurrence. Values are unrestricted here; the seeded generator
    /// keeps them single-digit so the policy's digit table applies.
    pub fn from_chain(seed: u64, initial: i64, ops: Vec<(Op, i64)>) -> Self {
        let mut value = initial;
        let intermediates: Vec<i64> = ops
            .iter()
            .map(|(op, operand)| {
                value = op.apply(value, *operand);
                value
            })
            .collect();
        let final_answer = *intermediates.last().unwrap_or(&initial);
        Self {
            seed,
            initial,
            ops,
            intermediates,
            final_answer,
        }
    }

    /// Chain length L.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// All step values stay in [1, 9], so each step's result is one digit.
    pub fn is_single_digit(&self) -> bool {
        (1..=9).contains(&self.initial)
            && self.intermediates.iter().all(|v| (1..=9).contains(v))
    }

    pub fn id(&self) -> String {
        format!("toy-{}", self.seed)
    }

    /// Human-readable statement.
    pub fn statement(&self) -> String {
        let steps: Vec<String> = self
            .ops
            .iter()
            .map(|(op, operand)| format!("{} {}", op.symbol(), operand))
            .collect();
        format!(
            "Start with {}. Apply in order: {}. Give the final value.",
            self.initial,
            steps.join(", ")
        )
    }
}

/// Deterministic problem generation with chain length drawn from
/// `[min_len, max_len]`, linearly weighted toward longer chains (short
/// single-digit chains live in a small space, so uniform lengths would
/// collide across seeds far more often). Every intermediate value is kept in
/// [1, 9] by sampling uniformly among the (op, operand) pairs that stay in
/// range; at least one such pair always exists (`*1` keeps any in-range
/// value fixed).
pub fn gen_problem_in(seed: u64, min_len: usize, max_len: usize) -> ToyProblem {
    debug_assert!(min_len >= 1 && min_len <= max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = {
        // weight(L) = L - min_len + 1
        let spans: Vec<usize> = (min_len..=max_len).map(|l| l - min_len + 1).collect();
        let total: usize = spans.iter().sum();
        let mut draw = rng.gen_range(0..total);
        let mut chosen = max_len;
        for (l, w) in (min_len..=max_len).zip(spans) {
            if draw < w {
                chosen = l;
                break;
            }
            draw -= w;
        }
        chosen
    };
    let initial = rng.gen_range(1..=9i64);
    let mut ops = Vec::with_capacity(len);
    let mut value = initial;
    for _ in 0..len {
        let mut candidates = Vec::new();
        for op in [Op::Add, Op::Sub, Op::Mul] {
            for operand in 1..=9i64 {
                let next = op.apply(value, operand);
                if (1..=9).contains(&next) {
                    candidates.push((op, operand));
                }
            }
        }
        let (op, operand) = candidates[rng.gen_range(0..candidates.len())];
        value = op.apply(value, operand);
        ops.push((op, operand));
    }
    ToyProblem::from_chain(seed, initial, ops)
}

/// Default generation: chain length in [2, 6].
pub fn gen_problem(seed: u64) -> ToyProblem {
    gen_problem_in(seed, 2, 6)
}
