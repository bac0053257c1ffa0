//! Finite expressions on fixed binary-tree templates.
//!
//! A finite expression is the triple (template, operator sequence, parameters).
//! Every unary node carries an affine scale/bias pair. Leaves see the raw input
//! vector and compute `sum_j alpha_j * u(x_j) + beta`; inner unary nodes compute
//! `alpha * u(child) + beta`. Binary nodes carry no parameters.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest node count of any supported template.
pub const MAX_NODES: usize = 5;

/// Argument at which `exp` saturates.
pub const EXP_CLAMP: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("input has {got} coordinates, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator sequence does not fit template: {0}")]
    InvalidSequence(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
    #[error("duplicate operator `{0}` in operator set")]
    DuplicateOperator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Zero,
    One,
    Id,
    Square,
    Cube,
    Quartic,
    Sin,
    Cos,
    Exp,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 9] = [
        UnaryOp::Zero,
        UnaryOp::One,
        UnaryOp::Id,
        UnaryOp::Square,
        UnaryOp::Cube,
        UnaryOp::Quartic,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
    ];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            UnaryOp::Zero => 0.0,
            UnaryOp::One => 1.0,
            UnaryOp::Id => z,
            UnaryOp::Square => z * z,
            UnaryOp::Cube => z * z * z,
            UnaryOp::Quartic => {
                let z2 = z * z;
                z2 * z2
            }
            UnaryOp::Sin => z.sin(),
            UnaryOp::Cos => z.cos(),
            UnaryOp::Exp => z.min(EXP_CLAMP).exp(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            UnaryOp::Zero | UnaryOp::One => 0.0,
            UnaryOp::Id => 1.0,
            UnaryOp::Square => 2.0 * z,
            UnaryOp::Cube => 3.0 * z * z,
            UnaryOp::Quartic => 4.0 * z * z * z,
            UnaryOp::Sin => z.cos(),
            UnaryOp::Cos => -z.sin(),
            UnaryOp::Exp => {
                if z < EXP_CLAMP {
                    z.exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            UnaryOp::Zero => "zero",
            UnaryOp::One => "one",
            UnaryOp::Id => "id",
            UnaryOp::Square => "square",
            UnaryOp::Cube => "cube",
            UnaryOp::Quartic => "quartic",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
        }
    }

    /// Renders `u(arg)`. `atomic` says whether `arg` needs no parentheses.
    fn render(self, arg: &str, atomic: bool) -> String {
        let wrapped = if atomic {
            arg.to_string()
        } else {
            format!("({arg})")
        };
        match self {
            UnaryOp::Zero => "0".to_string(),
            UnaryOp::One => "1".to_string(),
            UnaryOp::Id => wrapped,
            UnaryOp::Square => format!("{wrapped}^2"),
            UnaryOp::Cube => format!("{wrapped}^3"),
            UnaryOp::Quartic => format!("{wrapped}^4"),
            UnaryOp::Sin => format!("sin({arg})"),
            UnaryOp::Cos => format!("cos({arg})"),
            UnaryOp::Exp => format!("exp({arg})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 3] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul];

    #[inline]
    pub fn apply(self, l: f64, r: f64) -> f64 {
        match self {
            BinaryOp::Add => l + r,
            BinaryOp::Sub => l - r,
            BinaryOp::Mul => l * r,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }
}

/// One entry of an operator sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operator {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Unary(u) => f.write_str(u.tag()),
            Operator::Binary(b) => f.write_str(b.tag()),
        }
    }
}

/// The operator vocabularies searched over. Order is significant: controller
/// logits index into these lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSet {
    unary: Vec<UnaryOp>,
    binary: Vec<BinaryOp>,
}

impl OperatorSet {
    pub fn new(unary: Vec<UnaryOp>, binary: Vec<BinaryOp>) -> Result<Self, ExprError> {
        if unary.is_empty() || binary.is_empty() {
            return Err(ExprError::InvalidSequence(
                "operator lists must be nonempty".into(),
            ));
        }
        for (i, u) in unary.iter().enumerate() {
            if unary[..i].contains(u) {
                return Err(ExprError::DuplicateOperator(u.tag().into()));
            }
        }
        for (i, b) in binary.iter().enumerate() {
            if binary[..i].contains(b) {
                return Err(ExprError::DuplicateOperator(b.tag().into()));
            }
        }
        Ok(Self { unary, binary })
    }

    pub fn unary(&self) -> &[UnaryOp] {
        &self.unary
    }

    pub fn binary(&self) -> &[BinaryOp] {
        &self.binary
    }

    /// Number of choices available to a slot of the given kind.
    pub fn arity(&self, slot: SlotKind) -> usize {
        match slot {
            SlotKind::Unary => self.unary.len(),
            SlotKind::Binary => self.binary.len(),
        }
    }

    pub fn operator(&self, slot: SlotKind, index: usize) -> Operator {
        match slot {
            SlotKind::Unary => Operator::Unary(self.unary[index]),
            SlotKind::Binary => Operator::Binary(self.binary[index]),
        }
    }

    pub fn index_of(&self, op: Operator) -> Option<usize> {
        match op {
            Operator::Unary(u) => self.unary.iter().position(|&x| x == u),
            Operator::Binary(b) => self.binary.iter().position(|&x| x == b),
        }
    }
}

impl Default for OperatorSet {
    fn default() -> Self {
        Self {
            unary: UnaryOp::ALL.to_vec(),
            binary: BinaryOp::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    /// `u_root( b(u_leaf, u_leaf) )`
    Type1,
    /// `b_root( b_inner(u_leaf, u_leaf), u_leaf )`
    Type2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Unary,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Leaf,
    Inner { child: usize },
    Binary { left: usize, right: usize },
}

impl Node {
    pub fn slot_kind(self) -> SlotKind {
        match self {
            Node::Leaf | Node::Inner { .. } => SlotKind::Unary,
            Node::Binary { .. } => SlotKind::Binary,
        }
    }
}

/// A fixed tree shape. Nodes are stored in pre-order, so every child index is
/// larger than its parent's, and node index doubles as the sequence slot index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTemplate {
    kind: TemplateKind,
    input_dim: usize,
    nodes: Vec<Node>,
}

impl TreeTemplate {
    pub fn new(kind: TemplateKind, input_dim: usize) -> Result<Self, ExprError> {
        if input_dim == 0 {
            return Err(ExprError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let nodes = match kind {
            TemplateKind::Type1 => vec![
                Node::Inner { child: 1 },
                Node::Binary { left: 2, right: 3 },
                Node::Leaf,
                Node::Leaf,
            ],
            TemplateKind::Type2 => vec![
                Node::Binary { left: 1, right: 4 },
                Node::Binary { left: 2, right: 3 },
                Node::Leaf,
                Node::Leaf,
                Node::Leaf,
            ],
        };
        Ok(Self {
            kind,
            input_dim,
            nodes,
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn slot_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn slot_kinds(&self) -> impl Iterator<Item = SlotKind> + '_ {
        self.nodes.iter().map(|n| n.slot_kind())
    }

    /// Offset of each node's parameters in the flat vector; binary nodes have none.
    pub fn param_offsets(&self) -> (Vec<Option<usize>>, usize) {
        let mut offsets = Vec::with_capacity(self.nodes.len());
        let mut next = 0;
        for node in &self.nodes {
            match node {
                Node::Leaf => {
                    offsets.push(Some(next));
                    next += self.input_dim + 1;
                }
                Node::Inner { .. } => {
                    offsets.push(Some(next));
                    next += 2;
                }
                Node::Binary { .. } => offsets.push(None),
            }
        }
        (offsets, next)
    }

    pub fn param_len(&self) -> usize {
        self.param_offsets().1
    }
}

/// The operator assigned to each template slot, in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperatorSequence(pub Vec<Operator>);

impl OperatorSequence {
    pub fn validate(&self, template: &TreeTemplate) -> Result<(), ExprError> {
        if self.0.len() != template.slot_count() {
            return Err(ExprError::InvalidSequence(format!(
                "{} operators for {} slots",
                self.0.len(),
                template.slot_count()
            )));
        }
        for (j, (op, kind)) in self.0.iter().zip(template.slot_kinds()).enumerate() {
            let ok = matches!(
                (op, kind),
                (Operator::Unary(_), SlotKind::Unary) | (Operator::Binary(_), SlotKind::Binary)
            );
            if !ok {
                return Err(ExprError::InvalidSequence(format!(
                    "slot {j} expects a {kind:?} operator, got `{op}`"
                )));
            }
        }
        Ok(())
    }

    pub fn tags(&self) -> Vec<String> {
        self.0.iter().map(|o| o.to_string()).collect()
    }
}

impl fmt::Display for OperatorSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{op}")?;
        }
        f.write_str(")")
    }
}

/// Number of trainable parameters for a (template, sequence) pair.
pub fn param_count(
    template: &TreeTemplate,
    sequence: &OperatorSequence,
) -> Result<usize, ExprError> {
    sequence.validate(template)?;
    Ok(template.param_len())
}

/// Flat parameter vector. Leaves own `d` scales followed by one bias; inner
/// unary nodes own one scale followed by one bias; nodes appear in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpressionParams(pub Vec<f64>);

impl ExpressionParams {
    pub fn zeros(template: &TreeTemplate) -> Self {
        Self(vec![0.0; template.param_len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Leaf {
        op: UnaryOp,
        offset: usize,
    },
    Inner {
        op: UnaryOp,
        child: usize,
        offset: usize,
    },
    Binary {
        op: BinaryOp,
        left: usize,
        right: usize,
    },
}

/// A template with its operators resolved, ready for repeated evaluation
/// against different parameter vectors.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    input_dim: usize,
    param_len: usize,
}

impl Program {
    pub fn new(template: &TreeTemplate, sequence: &OperatorSequence) -> Result<Self, ExprError> {
        sequence.validate(template)?;
        let (offsets, param_len) = template.param_offsets();
        let instrs = template
            .nodes()
            .iter()
            .zip(&sequence.0)
            .zip(offsets)
            .map(|((node, op), offset)| match (*node, *op) {
                (Node::Leaf, Operator::Unary(op)) => Instr::Leaf {
                    op,
                    offset: offset.unwrap_or_default(),
                },
                (Node::Inner { child }, Operator::Unary(op)) => Instr::Inner {
                    op,
                    child,
                    offset: offset.unwrap_or_default(),
                },
                (Node::Binary { left, right }, Operator::Binary(op)) => {
                    Instr::Binary { op, left, right }
                }
                _ => unreachable!("sequence validated against template"),
            })
            .collect();
        Ok(Self {
            instrs,
            input_dim: template.input_dim(),
            param_len,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Unary operator at each leaf slot, `None` for other slots.
    pub fn leaf_ops(&self) -> Vec<Option<UnaryOp>> {
        self.instrs
            .iter()
            .map(|i| match i {
                Instr::Leaf { op, .. } => Some(*op),
                _ => None,
            })
            .collect()
    }

    /// Computes every node value. `feature(slot, j)` must return `u(x_j)` for
    /// the leaf operator at `slot`. Returns the root value.
    #[inline]
    pub fn forward<F>(&self, params: &[f64], feature: F, vals: &mut [f64; MAX_NODES]) -> f64
    where
        F: Fn(usize, usize) -> f64,
    {
        let d = self.input_dim;
        for (slot, instr) in self.instrs.iter().enumerate().rev() {
            vals[slot] = match *instr {
                Instr::Leaf { offset, .. } => {
                    let scales = &params[offset..offset + d];
                    let mut acc = params[offset + d];
                    for (j, a) in scales.iter().enumerate() {
                        acc += a * feature(slot, j);
                    }
                    acc
                }
                Instr::Inner { op, child, offset } => {
                    params[offset] * op.apply(vals[child]) + params[offset + 1]
                }
                Instr::Binary { op, left, right } => op.apply(vals[left], vals[right]),
            };
        }
        vals[0]
    }

    /// Adds `seed * d(root)/d(params)` into `grad`, reusing node values from
    /// a preceding [`Program::forward`] call.
    #[inline]
    pub fn backward<F>(
        &self,
        params: &[f64],
        feature: F,
        vals: &[f64; MAX_NODES],
        seed: f64,
        grad: &mut [f64],
    ) where
        F: Fn(usize, usize) -> f64,
    {
        let d = self.input_dim;
        let mut adj = [0.0; MAX_NODES];
        adj[0] = seed;
        for (slot, instr) in self.instrs.iter().enumerate() {
            let a = adj[slot];
            match *instr {
                Instr::Leaf { offset, .. } => {
                    for j in 0..d {
                        grad[offset + j] += a * feature(slot, j);
                    }
                    grad[offset + d] += a;
                }
                Instr::Inner { op, child, offset } => {
                    let z = vals[child];
                    grad[offset] += a * op.apply(z);
                    grad[offset + 1] += a;
                    adj[child] += a * params[offset] * op.derivative(z);
                }
                Instr::Binary { op, left, right } => match op {
                    BinaryOp::Add => {
                        adj[left] += a;
                        adj[right] += a;
                    }
                    BinaryOp::Sub => {
                        adj[left] += a;
                        adj[right] -= a;
                    }
                    BinaryOp::Mul => {
                        adj[left] += a * vals[right];
                        adj[right] += a * vals[left];
                    }
                },
            }
        }
    }
}

/// A fully specified expression `f(x; template, sequence, params)`.
#[derive(Debug, Clone)]
pub struct CompiledExpression {
    template: TreeTemplate,
    sequence: OperatorSequence,
    params: ExpressionParams,
    program: Program,
}

impl CompiledExpression {
    pub fn new(
        template: TreeTemplate,
        sequence: OperatorSequence,
        params: ExpressionParams,
    ) -> Result<Self, ExprError> {
        let program = Program::new(&template, &sequence)?;
        if params.len() != program.param_len() {
            return Err(ExprError::ParamLength {
                expected: program.param_len(),
                got: params.len(),
            });
        }
        Ok(Self {
            template,
            sequence,
            params,
            program,
        })
    }

    pub fn template(&self) -> &TreeTemplate {
        &self.template
    }

    pub fn sequence(&self) -> &OperatorSequence {
        &self.sequence
    }

    pub fn params(&self) -> &ExpressionParams {
        &self.params
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn with_params(&self, params: ExpressionParams) -> Result<Self, ExprError> {
        Self::new(self.template.clone(), self.sequence.clone(), params)
    }

    pub fn param_count(&self) -> usize {
        self.program.param_len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.program.input_dim() {
            return Err(ExprError::DimensionMismatch {
                expected: self.program.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_input(x)?;
        let leaf_ops = self.program.leaf_ops();
        let feature = |slot: usize, j: usize| leaf_ops[slot].map_or(0.0, |u| u.apply(x[j]));
        let mut vals = [0.0; MAX_NODES];
        let v = self.program.forward(&self.params.0, feature, &mut vals);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    /// Exact gradient of the expression value with respect to every parameter.
    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.check_input(x)?;
        let leaf_ops = self.program.leaf_ops();
        let feature = |slot: usize, j: usize| leaf_ops[slot].map_or(0.0, |u| u.apply(x[j]));
        let mut vals = [0.0; MAX_NODES];
        let v = self.program.forward(&self.params.0, feature, &mut vals);
        if !v.is_finite() {
            return Err(ExprError::NonFinite);
        }
        let mut grad = vec![0.0; self.program.param_len()];
        self.program
            .backward(&self.params.0, feature, &vals, 1.0, &mut grad);
        if grad.iter().all(|g| g.is_finite()) {
            Ok(grad)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    /// Infix rendering with coefficients rounded to `precision` decimals.
    pub fn to_symbolic_string(&self, var_names: &[String], precision: usize) -> String {
        self.render(var_names, precision, false)
    }

    /// Like [`Self::to_symbolic_string`], but drops terms whose coefficient
    /// rounds to zero at the requested precision.
    pub fn to_symbolic_string_elided(&self, var_names: &[String], precision: usize) -> String {
        self.render(var_names, precision, true)
    }

    fn render(&self, var_names: &[String], precision: usize, elide: bool) -> String {
        let names: Vec<String> = (0..self.program.input_dim())
            .map(|j| {
                var_names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("x{}", j + 1))
            })
            .collect();
        let fmt = Formatter {
            precision,
            elide,
            names: &names,
            params: &self.params.0,
        };
        fmt.node(&self.program, 0)
    }
}

struct Formatter<'a> {
    precision: usize,
    elide: bool,
    names: &'a [String],
    params: &'a [f64],
}

impl Formatter<'_> {
    fn number(&self, v: f64) -> String {
        if v == 0.0 {
            "0".to_string()
        } else {
            format!("{:.*}", self.precision, v)
        }
    }

    fn negligible(&self, v: f64) -> bool {
        self.elide && v.abs() < 0.5 * 10f64.powi(-(self.precision as i32))
    }

    /// Joins signed terms `(coefficient, factor)`; an empty factor means a constant.
    fn affine(&self, terms: &[(f64, String)]) -> String {
        let mut out = String::new();
        for (coef, factor) in terms.iter().filter(|(c, _)| !self.negligible(*c)) {
            let magnitude = self.number(coef.abs());
            let negative = *coef < 0.0 && magnitude != "0";
            let body = if factor.is_empty() {
                magnitude
            } else {
                format!("{magnitude}*{factor}")
            };
            if out.is_empty() {
                if negative {
                    out.push('-');
                }
            } else {
                out.push_str(if negative { " - " } else { " + " });
            }
            out.push_str(&body);
        }
        if out.is_empty() {
            "0".to_string()
        } else {
            out
        }
    }

    fn node(&self, program: &Program, slot: usize) -> String {
        let d = program.input_dim;
        match program.instrs[slot] {
            Instr::Leaf { op, offset } => {
                let scales = &self.params[offset..offset + d];
                let bias = self.params[offset + d];
                match op {
                    UnaryOp::Zero => self.affine(&[(bias, String::new())]),
                    UnaryOp::One => {
                        self.affine(&[(scales.iter().sum::<f64>() + bias, String::new())])
                    }
                    _ => {
                        let mut terms: Vec<(f64, String)> = scales
                            .iter()
                            .zip(self.names)
                            .map(|(&a, name)| (a, op.render(name, true)))
                            .collect();
                        terms.push((bias, String::new()));
                        self.affine(&terms)
                    }
                }
            }
            Instr::Inner { op, child, offset } => {
                let alpha = self.params[offset];
                let beta = self.params[offset + 1];
                match op {
                    UnaryOp::Zero => self.affine(&[(beta, String::new())]),
                    UnaryOp::One => self.affine(&[(alpha + beta, String::new())]),
                    _ => {
                        let inner = self.node(program, child);
                        self.affine(&[(alpha, op.render(&inner, false)), (beta, String::new())])
                    }
                }
            }
            Instr::Binary { op, left, right } => {
                let l = self.node(program, left);
                let r = self.node(program, right);
                format!("({l}) {} ({r})", op.symbol())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn type2(ops: [Operator; 5], d: usize, params: Vec<f64>) -> CompiledExpression {
        let t = TreeTemplate::new(TemplateKind::Type2, d).unwrap();
        CompiledExpression::new(t, OperatorSequence(ops.to_vec()), ExpressionParams(params))
            .unwrap()
    }

    use Operator::{Binary as B, Unary as U};

    #[test]
    fn template_shapes() {
        let t1 = TreeTemplate::new(TemplateKind::Type1, 3).unwrap();
        let kinds: Vec<_> = t1.slot_kinds().collect();
        assert_eq!(kinds.len(), 4);
        assert_eq!(kinds.iter().filter(|k| **k == SlotKind::Unary).count(), 3);
        assert_eq!(kinds.iter().filter(|k| **k == SlotKind::Binary).count(), 1);

        let t2 = TreeTemplate::new(TemplateKind::Type2, 3).unwrap();
        let kinds: Vec<_> = t2.slot_kinds().collect();
        assert_eq!(kinds.len(), 5);
        assert_eq!(kinds.iter().filter(|k| **k == SlotKind::Binary).count(), 2);

        let t = TreeTemplate::new(TemplateKind::Type2, 1).unwrap();
        assert_eq!(t.slot_count(), 5);
        let (offsets, len) = t.param_offsets();
        // leaf scale vectors have length 1: each leaf owns 2 entries
        assert_eq!(len, 6);
        assert_eq!(offsets[2], Some(0));
        assert_eq!(offsets[3], Some(2));

        assert!(TreeTemplate::new(TemplateKind::Type1, 0).is_err());
    }

    #[test]
    fn param_counts() {
        let t2 = TreeTemplate::new(TemplateKind::Type2, 3).unwrap();
        let seq = OperatorSequence(vec![
            B(BinaryOp::Add),
            B(BinaryOp::Mul),
            U(UnaryOp::Id),
            U(UnaryOp::Sin),
            U(UnaryOp::Exp),
        ]);
        assert_eq!(param_count(&t2, &seq).unwrap(), 12);

        let t1 = TreeTemplate::new(TemplateKind::Type1, 1).unwrap();
        let seq1 = OperatorSequence(vec![
            U(UnaryOp::Sin),
            B(BinaryOp::Add),
            U(UnaryOp::Id),
            U(UnaryOp::Id),
        ]);
        assert_eq!(param_count(&t1, &seq1).unwrap(), 6);

        let t5 = TreeTemplate::new(TemplateKind::Type2, 5).unwrap();
        assert_eq!(param_count(&t5, &seq).unwrap(), 18);

        assert!(param_count(&t1, &seq).is_err());
        let swapped = OperatorSequence(vec![
            B(BinaryOp::Add),
            U(UnaryOp::Id),
            U(UnaryOp::Id),
            U(UnaryOp::Id),
        ]);
        assert!(param_count(&t1, &swapped).is_err());
    }

    #[test]
    fn square_leaf_value_and_gradient() {
        // add(add(square-leaf, zero-leaf), zero-leaf) isolates one leaf
        let mut p = vec![0.0; 9];
        p[0] = 1.0;
        p[1] = 2.0;
        p[2] = 0.5;
        let e = type2(
            [
                B(BinaryOp::Add),
                B(BinaryOp::Add),
                U(UnaryOp::Square),
                U(UnaryOp::Zero),
                U(UnaryOp::Zero),
            ],
            2,
            p,
        );
        assert_eq!(e.evaluate(&[2.0, 3.0]).unwrap(), 22.5);
        let g = e.param_gradient(&[2.0, 3.0]).unwrap();
        assert_eq!(&g[0..3], &[4.0, 9.0, 1.0]);
    }

    #[test]
    fn id_leaf_gradient_and_zero_scales() {
        let mut p = vec![0.0; 9];
        p[2] = 1.25;
        let e = type2(
            [
                B(BinaryOp::Add),
                B(BinaryOp::Add),
                U(UnaryOp::Id),
                U(UnaryOp::Zero),
                U(UnaryOp::Zero),
            ],
            2,
            p,
        );
        assert_eq!(e.evaluate(&[7.0, -3.0]).unwrap(), 1.25);
        let g = e.param_gradient(&[2.0, 3.0]).unwrap();
        assert_eq!(&g[0..3], &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn learned_product_at_origin() {
        // three cube/cube/sin factors multiplied together, evaluated at zero
        let p = vec![
            -0.9030, 2.4025, -0.0262, 0.0311, // cube leaf
            -0.1840, -0.0432, -2.5147, -0.0181, // cube leaf
            0.1919, 0.1812, 0.7006, -0.7283, // sin leaf
        ];
        let e = type2(
            [
                B(BinaryOp::Mul),
                B(BinaryOp::Mul),
                U(UnaryOp::Cube),
                U(UnaryOp::Cube),
                U(UnaryOp::Sin),
            ],
            3,
            p,
        );
        let expected = 0.0311 * -0.0181 * -0.7283;
        assert!((e.evaluate(&[0.0, 0.0, 0.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn exp_is_clamped() {
        assert_eq!(UnaryOp::Exp.apply(1e6), EXP_CLAMP.exp());
        assert_eq!(UnaryOp::Exp.derivative(1e6), 0.0);
    }

    #[test]
    fn evaluation_rejects_wrong_dimension() {
        let e = type2(
            [
                B(BinaryOp::Add),
                B(BinaryOp::Add),
                U(UnaryOp::Id),
                U(UnaryOp::Id),
                U(UnaryOp::Id),
            ],
            2,
            vec![0.0; 9],
        );
        assert!(matches!(
            e.evaluate(&[1.0]),
            Err(ExprError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn symbolic_sin_leaf() {
        let mut p = vec![0.0; 12];
        p[8..12].copy_from_slice(&[0.1919, 0.1812, 0.7006, -0.7283]);
        let e = type2(
            [
                B(BinaryOp::Mul),
                B(BinaryOp::Mul),
                U(UnaryOp::Zero),
                U(UnaryOp::Zero),
                U(UnaryOp::Sin),
            ],
            3,
            p,
        );
        let s = e.to_symbolic_string(&names(&["R", "D", "Q"]), 4);
        assert_eq!(
            s,
            "((0) * (0)) * (0.1919*sin(R) + 0.1812*sin(D) + 0.7006*sin(Q) - 0.7283)"
        );
    }

    #[test]
    fn symbolic_elision() {
        let p = vec![1.5, 0.00001, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let e = type2(
            [
                B(BinaryOp::Sub),
                B(BinaryOp::Add),
                U(UnaryOp::Cube),
                U(UnaryOp::Zero),
                U(UnaryOp::One),
            ],
            2,
            p,
        );
        let n = names(&["S", "I"]);
        assert_eq!(
            e.to_symbolic_string(&n, 3),
            "((1.500*S^3 + 0.000*I^3 - 2.000) + (0)) - (0)"
        );
        assert_eq!(
            e.to_symbolic_string_elided(&n, 3),
            "((1.500*S^3 - 2.000) + (0)) - (0)"
        );
    }

    #[test]
    fn duplicate_operators_rejected() {
        assert!(OperatorSet::new(vec![UnaryOp::Id, UnaryOp::Id], vec![BinaryOp::Add]).is_err());
        let set = OperatorSet::default();
        assert_eq!(set.unary().len(), 9);
        assert_eq!(set.binary().len(), 3);
    }
}
