//! Finite-state one-period markets, endowments and expected utility.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::UtilityFn;

/// One-period market on `m` states with `d` stocks and `n` claims.
///
/// `stock_increments[w][i]` is the terminal-minus-initial price of stock `i`
/// in state `w` (zero interest), `claim_payoffs[w][j]` the payoff of claim `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMarket {
    pub states: Vec<String>,
    pub probs: Vec<f64>,
    pub stock_increments: Vec<Vec<f64>>,
    pub claim_payoffs: Vec<Vec<f64>>,
}

/// Cash plus a claim-quantity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endowment {
    pub x: f64,
    pub q: Vec<f64>,
}

impl Endowment {
    pub fn new(x: f64, q: Vec<f64>) -> Self {
        Self { x, q }
    }

    pub fn scalar(x: f64, q: f64) -> Self {
        Self { x, q: vec![q] }
    }

    /// Flattened `(x, q_1, .., q_n)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.q.len() + 1);
        v.push(self.x);
        v.extend_from_slice(&self.q);
        v
    }

    pub fn from_slice(z: &[f64]) -> Self {
        Self {
            x: z[0],
            q: z[1..].to_vec(),
        }
    }

    /// `self + t * dir` with `dir` given as `(x, q..)`.
    pub fn shifted(&self, dir: &[f64], t: f64) -> Self {
        let mut z = self.to_vec();
        for (zi, di) in z.iter_mut().zip(dir) {
            *zi += t * di;
        }
        Self::from_slice(&z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.q.iter().all(|v| v.is_finite())
    }

    pub fn norm1(&self) -> f64 {
        self.x.abs() + self.q.iter().map(|v| v.abs()).sum::<f64>()
    }
}

impl FiniteMarket {
    /// Build and validate. Probabilities summing to 1 within 1e-9 are renormalized.
    pub fn new(
        states: Vec<String>,
        probs: Vec<f64>,
        stock_increments: Vec<Vec<f64>>,
        claim_payoffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut mkt = Self {
            states,
            probs,
            stock_increments,
            claim_payoffs,
        };
        mkt.validate()?;
        Ok(mkt)
    }

    /// Unlabelled constructor; states are named `s0, s1, ..`.
    pub fn from_matrices(
        probs: Vec<f64>,
        stock_increments: Vec<Vec<f64>>,
        claim_payoffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let states = (0..probs.len()).map(|i| format!("s{i}")).collect();
        Self::new(states, probs, stock_increments, claim_payoffs)
    }

    fn validate(&mut self) -> Result<()> {
        let m = self.probs.len();
        if m == 0 {
            return Err(Error::Validation("market needs at least one state".into()));
        }
        if self.states.len() != m {
            return Err(Error::Validation(format!(
                "{} state labels for {m} probabilities",
                self.states.len()
            )));
        }
        // An empty outer array stands for an m x 0 increment matrix.
        if self.stock_increments.is_empty() {
            self.stock_increments = vec![Vec::new(); m];
        }
        if self.stock_increments.len() != m || self.claim_payoffs.len() != m {
            return Err(Error::Validation(format!(
                "expected {m} rows in stock_increments and claim_payoffs, got {} and {}",
                self.stock_increments.len(),
                self.claim_payoffs.len()
            )));
        }
        let d = self.stock_increments[0].len();
        let n = self.claim_payoffs[0].len();
        if n == 0 {
            return Err(Error::Validation("market needs at least one claim".into()));
        }
        if self.stock_increments.iter().any(|r| r.len() != d)
            || self.claim_payoffs.iter().any(|r| r.len() != n)
        {
            return Err(Error::Validation("ragged matrix rows".into()));
        }
        let all = self
            .probs
            .iter()
            .chain(self.stock_increments.iter().flatten())
            .chain(self.claim_payoffs.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite entry in market data".into()));
        }
        if let Some(p) = self.probs.iter().find(|&&p| p <= 0.0) {
            return Err(Error::Validation(format!(
                "state probabilities must be strictly positive, found {p}"
            )));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        for p in &mut self.probs {
            *p /= total;
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    pub fn d(&self) -> usize {
        self.stock_increments[0].len()
    }

    pub fn n(&self) -> usize {
        self.claim_payoffs[0].len()
    }

    /// Terminal wealth `x + H·Δ[w] + q·F[w]` in every state.
    pub fn wealth(&self, e: &Endowment, strategy: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|w| {
                e.x + dot(strategy, &self.stock_increments[w]) + dot(&e.q, &self.claim_payoffs[w])
            })
            .collect()
    }

    /// Wealth without trading, `x + q·F[w]`.
    pub fn static_wealth(&self, e: &Endowment) -> Vec<f64> {
        self.wealth(e, &vec![0.0; self.d()])
    }

    /// Column `j` of the payoff matrix.
    pub fn claim(&self, j: usize) -> Vec<f64> {
        self.claim_payoffs.iter().map(|r| r[j]).collect()
    }

    /// Largest absolute entry of the market data, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.stock_increments
            .iter()
            .flatten()
            .chain(self.claim_payoffs.iter().flatten())
            .fold(1.0f64, |acc, v| acc.max(v.abs()))
    }

    /// A copy where claim `j` becomes an extra stock with increment `F[:,j] - p_j`.
    ///
    /// Optimal investment in this market is utility maximization over the
    /// price section of the original market.
    pub fn with_claims_traded(&self, prices: &[f64]) -> Self {
        let mut increments = self.stock_increments.clone();
        for (row, payoff) in increments.iter_mut().zip(&self.claim_payoffs) {
            row.extend(payoff.iter().zip(prices).map(|(f, p)| f - p));
        }
        Self {
            states: self.states.clone(),
            probs: self.probs.clone(),
            stock_increments: increments,
            claim_payoffs: self.claim_payoffs.clone(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ p[w] U(wealth[w])`, `-inf` as soon as one state has utility `-inf`.
pub fn expected_utility(mkt: &FiniteMarket, u: &UtilityFn, wealth: &[f64]) -> f64 {
    assert_eq!(wealth.len(), mkt.m(), "wealth vector has wrong length");
    let mut acc = 0.0;
    for (p, &w) in mkt.probs.iter().zip(wealth) {
        let v = u.value(w);
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        acc += p * v;
    }
    acc
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNumber {
    Num(f64),
    Text(String),
}

impl RawNumber {
    fn value(&self) -> Result<f64> {
        match self {
            RawNumber::Num(v) => Ok(*v),
            RawNumber::Text(s) => match s.trim() {
                "NaN" | "nan" => Ok(f64::NAN),
                "Infinity" | "inf" => Ok(f64::INFINITY),
                "-Infinity" | "-inf" => Ok(f64::NEG_INFINITY),
                other => other
                    .parse()
                    .map_err(|_| Error::Parse(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    states: Vec<String>,
    probs: Vec<RawNumber>,
    #[serde(default)]
    stock_increments: Vec<Vec<RawNumber>>,
    claim_payoffs: Vec<Vec<RawNumber>>,
}

fn numbers(raw: &[RawNumber]) -> Result<Vec<f64>> {
    raw.iter().map(RawNumber::value).collect()
}

fn matrix(raw: &[Vec<RawNumber>]) -> Result<Vec<Vec<f64>>> {
    raw.iter().map(|r| numbers(r)).collect()
}

/// Quote bare `NaN` / `Infinity` tokens so non-standard JSON (as written by
/// Python's `json` module) reaches validation instead of failing to parse.
pub(crate) fn quote_nonfinite_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        if let Some(t) = token {
            out.push('"');
            out.push_str(t);
            out.push('"');
            rest = &rest[t.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

/// Parse a market from its JSON text.
pub fn parse_market(text: &str) -> Result<FiniteMarket> {
    let raw: RawMarket = serde_json::from_str(&quote_nonfinite_tokens(text))?;
    FiniteMarket::new(
        raw.states,
        numbers(&raw.probs)?,
        matrix(&raw.stock_increments)?,
        matrix(&raw.claim_payoffs)?,
    )
}

/// Load and validate a market instance file.
pub fn load_market(path: impl AsRef<Path>) -> Result<FiniteMarket> {
    let text = std::fs::read_to_string(path)?;
    parse_market(&text)
}
