#![allow(dead_code)]

use fex_core::{
    BinaryOp, CompiledExpression, ExpressionParams, Operator, OperatorSequence, TemplateKind,
    Trajectory, TrajectoryDataset, TreeTemplate, UnaryOp,
};
use rand::Rng;

pub fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{}", j + 1)).collect()
}

pub fn random_sequence<R: Rng>(template: &TreeTemplate, rng: &mut R) -> OperatorSequence {
    let ops = template
        .slot_kinds()
        .map(|k| match k {
            fex_core::expr::SlotKind::Unary => {
                Operator::Unary(UnaryOp::ALL[rng.gen_range(0..UnaryOp::ALL.len())])
            }
            fex_core::expr::SlotKind::Binary => {
                Operator::Binary(BinaryOp::ALL[rng.gen_range(0..BinaryOp::ALL.len())])
            }
        })
        .collect();
    OperatorSequence(ops)
}

/// A random template of either kind with `d` inputs, a random sequence and
/// parameters drawn from `[-scale, scale]`.
pub fn random_expression<R: Rng>(d: usize, scale: f64, rng: &mut R) -> CompiledExpression {
    let kind = if rng.gen_bool(0.5) {
        TemplateKind::Type1
    } else {
        TemplateKind::Type2
    };
    let template = TreeTemplate::new(kind, d).unwrap();
    let seq = random_sequence(&template, rng);
    let params = (0..template.param_len())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    CompiledExpression::new(template, seq, ExpressionParams(params)).unwrap()
}

pub fn random_dataset<R: Rng>(
    d: usize,
    n_traj: usize,
    rows: usize,
    dt: f64,
    rng: &mut R,
) -> TrajectoryDataset {
    let trajectories = (0..n_traj)
        .map(|_| Trajectory::new((0..rows * d).map(|_| rng.gen_range(0.0..1.0)).collect(), d))
        .collect();
    TrajectoryDataset::new(trajectories, dt, names(d)).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

/// Central differences of `f` around `theta`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Evaluates the infix strings produced by `to_symbolic_string`.
pub struct InfixEval<'a> {
    chars: Vec<char>,
    pos: usize,
    vars: &'a [(String, f64)],
}

impl<'a> InfixEval<'a> {
    pub fn eval(text: &str, vars: &'a [(String, f64)]) -> f64 {
        let mut p = Self {
            chars: text.chars().collect(),
            pos: 0,
            vars,
        };
        let v = p.expr();
        p.skip_ws();
        assert_eq!(p.pos, p.chars.len(), "trailing input in {text:?}");
        v
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos] == ' ' {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) {
        assert_eq!(
            self.peek(),
            Some(c),
            "at {} in {:?}",
            self.pos,
            self.chars.iter().collect::<String>()
        );
        self.pos += 1;
    }

    fn expr(&mut self) -> f64 {
        let mut v = self.term();
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    v += self.term();
                }
                Some('-') => {
                    self.pos += 1;
                    v -= self.term();
                }
                _ => return v,
            }
        }
    }

    fn term(&mut self) -> f64 {
        let mut v = self.signed();
        while self.peek() == Some('*') {
            self.pos += 1;
            v *= self.signed();
        }
        v
    }

    fn signed(&mut self) -> f64 {
        if self.peek() == Some('-') {
            self.pos += 1;
            -self.power()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> f64 {
        let base = self.primary();
        if self.peek() == Some('^') {
            self.pos += 1;
            let start = self.pos;
            while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let e: i32 = self.chars[start..self.pos]
                .iter()
                .collect::<String>()
                .parse()
                .unwrap();
            base.powi(e)
        } else {
            base
        }
    }

    fn primary(&mut self) -> f64 {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let v = self.expr();
                self.eat(')');
                v
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.')
                {
                    self.pos += 1;
                }
                self.chars[start..self.pos]
                    .iter()
                    .collect::<String>()
                    .parse()
                    .unwrap()
            }
            Some(_) => {
                let start = self.pos;
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word: String = self.chars[start..self.pos].iter().collect();
                let func = |f: fn(f64) -> f64, me: &mut Self| {
                    me.eat('(');
                    let v = me.expr();
                    me.eat(')');
                    f(v)
                };
                match word.as_str() {
                    "sin" => func(f64::sin, self),
                    "cos" => func(f64::cos, self),
                    "exp" => func(|z| z.min(30.0).exp(), self),
                    name => {
                        self.vars
                            .iter()
                            .find(|(n, _)| n == name)
                            .unwrap_or_else(|| panic!("unknown name {name:?}"))
                            .1
                    }
                }
            }
            None => panic!("unexpected end of input"),
        }
    }
}
