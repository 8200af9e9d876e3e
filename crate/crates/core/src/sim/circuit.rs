//! Circuit representation and its line-oriented text form.
//!
//! The text form uses one instruction per line, close to the usual
//! stabilizer-circuit dialect:
//!
//! ```text
//! # round 0
//! R 9 10 11
//! H 9
//! CX 9 0 9 1
//! DEPOLARIZE1(0.001) 0 1 2
//! MEASURE_NOISE(0.001) 9
//! M 9 10 11
//! DETECTOR(0, 3) rec[-1] rec[-9]
//! OBSERVABLE_INCLUDE(0) rec[-3] rec[-2] rec[-1]
//! ```
//!
//! `MEASURE_NOISE(p) q` flips the next recorded outcome of `q` and maps onto
//! the `M(p) q` form of the common dialect.

use std::fmt::Write as _;

use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    Reset(Vec<usize>),
    Hadamard(Vec<usize>),
    /// (control, target) pairs.
    ControlledX(Vec<(usize, usize)>),
    MeasureZ(Vec<usize>),
    Depolarize1(f64, Vec<usize>),
    Depolarize2(f64, Vec<(usize, usize)>),
    FlipX(f64, Vec<usize>),
    FlipZ(f64, Vec<usize>),
    MeasureNoise(f64, Vec<usize>),
    /// Detector at `(round, check)` over measurement look-backs (`rec[-k]`).
    Detector { round: usize, check: usize, lookback: Vec<usize> },
    ObservableInclude { id: usize, lookback: Vec<usize> },
}

impl Instruction {
    pub fn is_noise(&self) -> bool {
        matches!(
            self,
            Instruction::Depolarize1(..)
                | Instruction::Depolarize2(..)
                | Instruction::FlipX(..)
                | Instruction::FlipZ(..)
                | Instruction::MeasureNoise(..)
        )
    }

    fn probability(&self) -> Option<f64> {
        match self {
            Instruction::Depolarize1(p, _)
            | Instruction::Depolarize2(p, _)
            | Instruction::FlipX(p, _)
            | Instruction::FlipZ(p, _)
            | Instruction::MeasureNoise(p, _) => Some(*p),
            _ => None,
        }
    }
}

/// An ordered Clifford circuit with noise channels and detector annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub num_qubits: usize,
    pub ops: Vec<Instruction>,
    /// Index into `ops` where each syndrome round starts.
    pub round_markers: Vec<usize>,
    /// Checks per round in the dense detector layout.
    pub checks_per_round: usize,
    pub num_observables: usize,
}

impl Circuit {
    pub fn new(num_qubits: usize, checks_per_round: usize, num_observables: usize) -> Self {
        Self {
            num_qubits,
            ops: Vec::new(),
            round_markers: Vec::new(),
            checks_per_round,
            num_observables,
        }
    }

    pub fn push(&mut self, op: Instruction) {
        self.ops.push(op);
    }

    pub fn mark_round(&mut self) {
        self.round_markers.push(self.ops.len());
    }

    pub fn rounds(&self) -> usize {
        self.round_markers.len()
    }

    pub fn num_measurements(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                Instruction::MeasureZ(t) => t.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn num_detectors(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Instruction::Detector { .. })).count()
    }

    /// Inserts an instruction at `index`, keeping round markers attached to
    /// the instructions they pointed at.
    pub fn insert(&mut self, index: usize, op: Instruction) {
        self.ops.insert(index, op);
        for m in self.round_markers.iter_mut() {
            if *m > index {
                *m += 1;
            }
        }
    }

    /// Copy of the circuit with every noise channel removed.
    pub fn without_noise(&self) -> Self {
        let mut out = Self::new(self.num_qubits, self.checks_per_round, self.num_observables);
        for (i, op) in self.ops.iter().enumerate() {
            if self.round_markers.contains(&i) {
                out.mark_round();
            }
            if !op.is_noise() {
                out.push(op.clone());
            }
        }
        out
    }

    /// Checks that look-backs reference emitted measurements, qubits are in
    /// range and probabilities lie in `[0, 1]`.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut measured = 0usize;
        for op in &self.ops {
            if let Some(p) = op.probability() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(SimError::Probability(p));
                }
            }
            let qubits: Vec<usize> = match op {
                Instruction::Reset(t)
                | Instruction::Hadamard(t)
                | Instruction::MeasureZ(t)
                | Instruction::Depolarize1(_, t)
                | Instruction::FlipX(_, t)
                | Instruction::FlipZ(_, t)
                | Instruction::MeasureNoise(_, t) => t.clone(),
                Instruction::ControlledX(p) | Instruction::Depolarize2(_, p) => {
                    p.iter().flat_map(|&(a, b)| [a, b]).collect()
                }
                _ => Vec::new(),
            };
            if let Some(&q) = qubits.iter().find(|&&q| q >= self.num_qubits) {
                return Err(SimError::Qubit(q));
            }
            match op {
                Instruction::MeasureZ(t) => measured += t.len(),
                Instruction::Detector { lookback, round, check } => {
                    if lookback.iter().any(|&k| k == 0 || k > measured) {
                        return Err(SimError::Lookback);
                    }
                    if *round >= self.rounds() || *check >= self.checks_per_round {
                        return Err(SimError::Coordinates(*round, *check));
                    }
                }
                Instruction::ObservableInclude { id, lookback } => {
                    if lookback.iter().any(|&k| k == 0 || k > measured) {
                        return Err(SimError::Lookback);
                    }
                    if *id >= self.num_observables {
                        return Err(SimError::Observable(*id));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# qubits {} checks {} observables {}",
            self.num_qubits, self.checks_per_round, self.num_observables
        );
        let list = |t: &[usize]| t.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(" ");
        let pairs = |t: &[(usize, usize)]| t.iter().map(|(a, b)| format!("{a} {b}")).collect::<Vec<_>>().join(" ");
        let recs = |t: &[usize]| t.iter().map(|k| format!("rec[-{k}]")).collect::<Vec<_>>().join(" ");
        for (i, op) in self.ops.iter().enumerate() {
            if let Some(r) = self.round_markers.iter().position(|&m| m == i) {
                let _ = writeln!(out, "# round {r}");
            }
            let line = match op {
                Instruction::Reset(t) => format!("R {}", list(t)),
                Instruction::Hadamard(t) => format!("H {}", list(t)),
                Instruction::ControlledX(p) => format!("CX {}", pairs(p)),
                Instruction::MeasureZ(t) => format!("M {}", list(t)),
                Instruction::Depolarize1(p, t) => format!("DEPOLARIZE1({p}) {}", list(t)),
                Instruction::Depolarize2(p, t) => format!("DEPOLARIZE2({p}) {}", pairs(t)),
                Instruction::FlipX(p, t) => format!("X_ERROR({p}) {}", list(t)),
                Instruction::FlipZ(p, t) => format!("Z_ERROR({p}) {}", list(t)),
                Instruction::MeasureNoise(p, t) => format!("MEASURE_NOISE({p}) {}", list(t)),
                Instruction::Detector { round, check, lookback } => {
                    format!("DETECTOR({round}, {check}) {}", recs(lookback))
                }
                Instruction::ObservableInclude { id, lookback } => {
                    format!("OBSERVABLE_INCLUDE({id}) {}", recs(lookback))
                }
            };
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let parse_err = |line: usize, msg: &str| SimError::Parse(line + 1, msg.to_string());
        let mut circuit = Circuit::new(0, 0, 0);
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let words: Vec<&str> = comment.split_whitespace().collect();
                match words.as_slice() {
                    ["qubits", q, "checks", c, "observables", o] => {
                        let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(ln, "bad header"));
                        circuit.num_qubits = num(q)?;
                        circuit.checks_per_round = num(c)?;
                        circuit.num_observables = num(o)?;
                    }
                    ["round", _] => circuit.mark_round(),
                    _ => {}
                }
                continue;
            }
            let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
            let (name, arg) = match head.split_once('(') {
                Some((name, tail)) => {
                    // Arguments may contain spaces: re-join up to ')'.
                    let joined = format!("{tail} {rest}");
                    let (args, after) = joined.split_once(')').ok_or_else(|| parse_err(ln, "unclosed argument"))?;
                    (name.to_string(), Some((args.trim().to_string(), after.trim().to_string())))
                }
                None => (head.to_string(), None),
            };
            let (args, targets) = match arg {
                Some((a, t)) => (Some(a), t),
                None => (None, rest.to_string()),
            };
            let nums = |s: &str| -> Result<Vec<usize>, SimError> {
                s.split_whitespace()
                    .map(|w| w.parse::<usize>().map_err(|_| parse_err(ln, "bad target")))
                    .collect()
            };
            let recs = |s: &str| -> Result<Vec<usize>, SimError> {
                s.split_whitespace()
                    .map(|w| {
                        w.strip_prefix("rec[-")
                            .and_then(|w| w.strip_suffix(']'))
                            .and_then(|w| w.parse::<usize>().ok())
                            .ok_or_else(|| parse_err(ln, "bad record reference"))
                    })
                    .collect()
            };
            let pairs = |v: Vec<usize>| -> Result<Vec<(usize, usize)>, SimError> {
                if v.len() % 2 != 0 {
                    return Err(parse_err(ln, "odd number of pair targets"));
                }
                Ok(v.chunks(2).map(|c| (c[0], c[1])).collect())
            };
            let prob = || -> Result<f64, SimError> {
                args.as_deref()
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(ln, "missing probability"))
            };
            let op = match name.as_str() {
                "R" => Instruction::Reset(nums(&targets)?),
                "H" => Instruction::Hadamard(nums(&targets)?),
                "CX" => Instruction::ControlledX(pairs(nums(&targets)?)?),
                "M" => Instruction::MeasureZ(nums(&targets)?),
                "DEPOLARIZE1" => Instruction::Depolarize1(prob()?, nums(&targets)?),
                "DEPOLARIZE2" => Instruction::Depolarize2(prob()?, pairs(nums(&targets)?)?),
                "X_ERROR" => Instruction::FlipX(prob()?, nums(&targets)?),
                "Z_ERROR" => Instruction::FlipZ(prob()?, nums(&targets)?),
                "MEASURE_NOISE" => Instruction::MeasureNoise(prob()?, nums(&targets)?),
                "DETECTOR" => {
                    let coords = nums(&args.clone().unwrap_or_default().replace(',', " "))?;
                    let [round, check] = coords[..] else {
                        return Err(parse_err(ln, "detector needs (round, check) coordinates"));
                    };
                    Instruction::Detector {
                        round,
                        check,
                        lookback: recs(&targets)?,
                    }
                }
                "OBSERVABLE_INCLUDE" => {
                    let id = args
                        .as_deref()
                        .and_then(|a| a.trim().parse::<usize>().ok())
                        .ok_or_else(|| parse_err(ln, "missing observable id"))?;
                    Instruction::ObservableInclude {
                        id,
                        lookback: recs(&targets)?,
                    }
                }
                other => return Err(parse_err(ln, &format!("unknown instruction {other}"))),
            };
            circuit.push(op);
        }
        circuit.validate()?;
        Ok(circuit)
    }
}
