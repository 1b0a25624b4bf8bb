//! Typed expression trees used as policy equations.
//!
//! A tree evaluates a state vector to one scalar action value. Nodes are
//! strongly typed (FLOAT or BOOL) so that logical and arithmetic primitives
//! can be mixed without ever producing an ill-typed program: `and`/`or` take
//! booleans, comparisons take floats and yield booleans, `if` takes a boolean
//! condition and two float branches. The root of a policy tree is always
//! FLOAT.

mod text;

pub use text::parse_tree;

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hard structural caps on a single tree.
pub const MAX_DEPTH: usize = 5;
pub const MAX_GENES: usize = 100;
pub const MAX_COMPLEXITY: u32 = 100;

/// Range of random float terminals.
pub const CONST_RANGE: f64 = 20.0;

/// Protected division: `a / b == 1.0` whenever `|b| < DIV_EPS`.
pub const DIV_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ty {
    Float,
    Bool,
}

/// One gene: a terminal, variable, or function node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gene {
    Const(f64),
    BoolConst(bool),
    Var(usize),
    Tanh,
    Abs,
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
    Gt,
    Lt,
    If,
}

impl Gene {
    pub fn arity(self) -> usize {
        match self {
            Gene::Const(_) | Gene::BoolConst(_) | Gene::Var(_) => 0,
            Gene::Tanh | Gene::Abs => 1,
            Gene::Add
            | Gene::Sub
            | Gene::Mul
            | Gene::Div
            | Gene::And
            | Gene::Or
            | Gene::Gt
            | Gene::Lt => 2,
            Gene::If => 3,
        }
    }

    pub fn ty(self) -> Ty {
        match self {
            Gene::BoolConst(_) | Gene::And | Gene::Or | Gene::Gt | Gene::Lt => Ty::Bool,
            _ => Ty::Float,
        }
    }

    /// Required type of the i-th child.
    pub fn child_ty(self, i: usize) -> Ty {
        match self {
            Gene::And | Gene::Or => Ty::Bool,
            Gene::If => {
                if i == 0 {
                    Ty::Bool
                } else {
                    Ty::Float
                }
            }
            _ => Ty::Float,
        }
    }
}

/// Per-class node weights for the complexity measure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexityWeights {
    pub variable: u32,
    pub terminal: u32,
    pub basic: u32,
    pub divide: u32,
    pub logic: u32,
    pub unary: u32,
    pub conditional: u32,
    pub comparison: u32,
}

impl Default for ComplexityWeights {
    fn default() -> Self {
        ComplexityWeights {
            variable: 1,
            terminal: 1,
            basic: 1,
            divide: 2,
            logic: 4,
            unary: 4,
            conditional: 5,
            comparison: 1,
        }
    }
}

impl ComplexityWeights {
    pub fn weight_of(&self, gene: Gene) -> u32 {
        match gene {
            Gene::Var(_) => self.variable,
            Gene::Const(_) | Gene::BoolConst(_) => self.terminal,
            Gene::Add | Gene::Sub | Gene::Mul => self.basic,
            Gene::Div => self.divide,
            Gene::And | Gene::Or => self.logic,
            Gene::Tanh | Gene::Abs => self.unary,
            Gene::If => self.conditional,
            Gene::Gt | Gene::Lt => self.comparison,
        }
    }
}

const NO_CHILD: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
struct Node {
    gene: Gene,
    children: [u32; 3],
}

/// Arena-backed expression tree. Immutable after construction; all editing
/// operators produce fresh trees.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionTree {
    nodes: Vec<Node>,
    root: u32,
}

/// Incremental bottom-up tree construction with type checking.
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        TreeBuilder { nodes: Vec::new() }
    }

    /// Adds a node whose children must already be in the builder.
    pub fn add(&mut self, gene: Gene, children: &[u32]) -> Result<u32> {
        if children.len() != gene.arity() {
            return Err(Error::Type {
                pos: 0,
                msg: format!(
                    "{:?} takes {} children, got {}",
                    gene,
                    gene.arity(),
                    children.len()
                ),
            });
        }
        let mut slots = [NO_CHILD; 3];
        for (i, &c) in children.iter().enumerate() {
            let child = self
                .nodes
                .get(c as usize)
                .ok_or_else(|| Error::Usage(format!("unknown child node id {c}")))?;
            let want = gene.child_ty(i);
            if child.gene.ty() != want {
                return Err(Error::Type {
                    pos: 0,
                    msg: format!("{:?} child {} must be {:?}", gene, i, want),
                });
            }
            slots[i] = c;
        }
        self.nodes.push(Node {
            gene,
            children: slots,
        });
        Ok((self.nodes.len() - 1) as u32)
    }

    pub fn finish(self, root: u32) -> Result<ExpressionTree> {
        let node = self
            .nodes
            .get(root as usize)
            .ok_or_else(|| Error::Usage(format!("unknown root node id {root}")))?;
        if node.gene.ty() != Ty::Float {
            return Err(Error::Type {
                pos: 0,
                msg: "tree root must be FLOAT".to_string(),
            });
        }
        Ok(ExpressionTree {
            nodes: self.nodes,
            root,
        })
    }
}

impl Default for TreeBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ExpressionTree {
    /// Single-terminal tree.
    pub fn leaf(gene: Gene) -> Result<Self> {
        let mut b = TreeBuilder::new();
        let id = b.add(gene, &[])?;
        b.finish(id)
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn len(&self) -> usize {
        self.subtree_len(self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn gene_at(&self, id: u32) -> Gene {
        self.nodes[id as usize].gene
    }

    pub fn children_of(&self, id: u32) -> &[u32] {
        let n = &self.nodes[id as usize];
        &n.children[..n.gene.arity()]
    }

    /// Ids of all nodes reachable from the root, in preorder.
    pub fn node_ids(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nodes.len());
        self.collect_ids(self.root, &mut out);
        out
    }

    fn collect_ids(&self, id: u32, out: &mut Vec<u32>) {
        out.push(id);
        for &c in self.children_of(id) {
            self.collect_ids(c, out);
        }
    }

    fn subtree_len(&self, id: u32) -> usize {
        1 + self
            .children_of(id)
            .iter()
            .map(|&c| self.subtree_len(c))
            .sum::<usize>()
    }

    /// Longest root-to-leaf path in edges; a single terminal has depth 0.
    pub fn depth(&self) -> usize {
        self.depth_of(self.root)
    }

    pub fn depth_of(&self, id: u32) -> usize {
        self.children_of(id)
            .iter()
            .map(|&c| 1 + self.depth_of(c))
            .max()
            .unwrap_or(0)
    }

    /// Highest variable index referenced, if any.
    pub fn max_var_index(&self) -> Option<usize> {
        self.node_ids()
            .into_iter()
            .filter_map(|id| match self.gene_at(id) {
                Gene::Var(i) => Some(i),
                _ => None,
            })
            .max()
    }

    pub fn complexity(&self, weights: &ComplexityWeights) -> u32 {
        self.node_ids()
            .into_iter()
            .map(|id| weights.weight_of(self.gene_at(id)))
            .sum()
    }

    /// Evaluates the tree on a state vector.
    pub fn eval(&self, state: &[f64]) -> Result<f64> {
        if let Some(max) = self.max_var_index() {
            if max >= state.len() {
                return Err(Error::Shape(format!(
                    "tree reads x{max} but state has {} entries",
                    state.len()
                )));
            }
        }
        Ok(self.eval_float(self.root, state))
    }

    /// Evaluation without the shape check. Callers must have verified that
    /// `state` covers every variable index.
    pub fn eval_unchecked(&self, state: &[f64]) -> f64 {
        self.eval_float(self.root, state)
    }

    fn eval_float(&self, id: u32, state: &[f64]) -> f64 {
        let node = &self.nodes[id as usize];
        let c = &node.children;
        match node.gene {
            Gene::Const(v) => v,
            Gene::Var(i) => state[i],
            Gene::Tanh => self.eval_float(c[0], state).tanh(),
            Gene::Abs => self.eval_float(c[0], state).abs(),
            Gene::Add => self.eval_float(c[0], state) + self.eval_float(c[1], state),
            Gene::Sub => self.eval_float(c[0], state) - self.eval_float(c[1], state),
            Gene::Mul => self.eval_float(c[0], state) * self.eval_float(c[1], state),
            Gene::Div => {
                let den = self.eval_float(c[1], state);
                if den.abs() < DIV_EPS {
                    1.0
                } else {
                    self.eval_float(c[0], state) / den
                }
            }
            Gene::If => {
                if self.eval_bool(c[0], state) {
                    self.eval_float(c[1], state)
                } else {
                    self.eval_float(c[2], state)
                }
            }
            Gene::BoolConst(_) | Gene::And | Gene::Or | Gene::Gt | Gene::Lt => {
                unreachable!("bool node in float position")
            }
        }
    }

    fn eval_bool(&self, id: u32, state: &[f64]) -> bool {
        let node = &self.nodes[id as usize];
        let c = &node.children;
        match node.gene {
            Gene::BoolConst(v) => v,
            Gene::And => self.eval_bool(c[0], state) && self.eval_bool(c[1], state),
            Gene::Or => self.eval_bool(c[0], state) || self.eval_bool(c[1], state),
            Gene::Gt => self.eval_float(c[0], state) > self.eval_float(c[1], state),
            Gene::Lt => self.eval_float(c[0], state) < self.eval_float(c[1], state),
            _ => unreachable!("float node in bool position"),
        }
    }

    /// Copies the subtree rooted at `id` into a standalone tree. Only valid
    /// for FLOAT-rooted subtrees when the result is used as a policy tree;
    /// internal callers may hold BOOL subtrees transiently via `copy_into`.
    pub fn subtree(&self, id: u32) -> ExpressionTree {
        let mut nodes = Vec::new();
        let root = self.copy_into(id, &mut nodes);
        ExpressionTree { nodes, root }
    }

    fn copy_into(&self, id: u32, dst: &mut Vec<Node>) -> u32 {
        let node = &self.nodes[id as usize];
        let mut slots = [NO_CHILD; 3];
        for (i, &c) in self.children_of(id).iter().enumerate() {
            slots[i] = self.copy_into(c, dst);
        }
        dst.push(Node {
            gene: node.gene,
            children: slots,
        });
        (dst.len() - 1) as u32
    }

    /// New tree with the subtree at `at` replaced by `replacement` (which
    /// must have the same return type as the node at `at`).
    pub fn with_replaced(&self, at: u32, replacement: &ExpressionTree) -> Result<ExpressionTree> {
        if self.gene_at(at).ty() != replacement.gene_at(replacement.root).ty() {
            return Err(Error::Type {
                pos: 0,
                msg: "replacement subtree has incompatible return type".to_string(),
            });
        }
        let mut nodes = Vec::new();
        let root = self.replace_rec(self.root, at, replacement, &mut nodes);
        Ok(ExpressionTree { nodes, root })
    }

    fn replace_rec(
        &self,
        id: u32,
        at: u32,
        replacement: &ExpressionTree,
        dst: &mut Vec<Node>,
    ) -> u32 {
        if id == at {
            return replacement.copy_into(replacement.root, dst);
        }
        let node = &self.nodes[id as usize];
        let mut slots = [NO_CHILD; 3];
        for (i, &c) in self.children_of(id).iter().enumerate() {
            slots[i] = self.replace_rec(c, at, replacement, dst);
        }
        dst.push(Node {
            gene: node.gene,
            children: slots,
        });
        (dst.len() - 1) as u32
    }

    /// Applies a function to every float constant, keeping structure intact.
    pub fn map_constants(&self, mut f: impl FnMut(f64) -> f64) -> ExpressionTree {
        let mut nodes = self.nodes.clone();
        // Only touch nodes reachable from the root.
        for id in self.node_ids() {
            if let Gene::Const(v) = nodes[id as usize].gene {
                nodes[id as usize].gene = Gene::Const(f(v));
            }
        }
        ExpressionTree {
            nodes,
            root: self.root,
        }
    }

    fn has_var(&self, id: u32) -> bool {
        match self.gene_at(id) {
            Gene::Var(_) => true,
            _ => self.children_of(id).iter().any(|&c| self.has_var(c)),
        }
    }

    /// Constant folding: every variable-free subtree collapses into a single
    /// terminal, and `if` nodes with a constant condition keep only the live
    /// branch. Evaluation semantics are preserved exactly because the folded
    /// terminal carries the very value evaluation would have computed.
    pub fn auto_cancel(&self) -> ExpressionTree {
        // Branch selection on a constant `if` condition can eliminate the
        // only variable below an ancestor, making the ancestor foldable
        // only on a later pass; iterate until nothing changes.
        let mut cur = self.cancel_once();
        loop {
            let next = cur.cancel_once();
            if next == cur {
                return cur;
            }
            cur = next;
        }
    }

    fn cancel_once(&self) -> ExpressionTree {
        let mut nodes = Vec::new();
        let root = self.cancel_rec(self.root, &mut nodes);
        ExpressionTree { nodes, root }
    }

    fn cancel_rec(&self, id: u32, dst: &mut Vec<Node>) -> u32 {
        let gene = self.gene_at(id);
        if gene.arity() > 0 && !self.has_var(id) {
            let folded = match gene.ty() {
                Ty::Float => {
                    let v = self.eval_float(id, &[]);
                    if v.is_finite() {
                        Some(Gene::Const(v))
                    } else {
                        None
                    }
                }
                Ty::Bool => Some(Gene::BoolConst(self.eval_bool(id, &[]))),
            };
            if let Some(g) = folded {
                dst.push(Node {
                    gene: g,
                    children: [NO_CHILD; 3],
                });
                return (dst.len() - 1) as u32;
            }
        }
        if gene == Gene::If {
            let cond = self.children_of(id)[0];
            if !self.has_var(cond) {
                let branch = if self.eval_bool(cond, &[]) { 1 } else { 2 };
                return self.cancel_rec(self.children_of(id)[branch], dst);
            }
        }
        let mut slots = [NO_CHILD; 3];
        for (i, &c) in self.children_of(id).iter().enumerate() {
            slots[i] = self.cancel_rec(c, dst);
        }
        dst.push(Node {
            gene,
            children: slots,
        });
        (dst.len() - 1) as u32
    }
}

/// Parameters of the grow initialization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowConfig {
    pub n_vars: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub max_genes: usize,
    pub max_complexity: u32,
}

impl GrowConfig {
    pub fn new(n_vars: usize) -> Self {
        GrowConfig {
            n_vars,
            d_min: 0,
            d_max: MAX_DEPTH,
            max_genes: MAX_GENES,
            max_complexity: MAX_COMPLEXITY,
        }
    }
}

/// Random tree initialization: draw a target depth uniformly from
/// [d_min, d_max], then recurse. At depth < 1 a terminal or variable is
/// drawn; otherwise a function whose return type matches the slot. One
/// uniformly chosen child continues with depth d-1 so the drawn depth is
/// attained; every other child gets an independent depth from [0, d-1].
pub fn grow(
    rng: &mut impl Rng,
    cfg: &GrowConfig,
    weights: &ComplexityWeights,
) -> ExpressionTree {
    assert!(cfg.d_min <= cfg.d_max && cfg.d_max <= MAX_DEPTH);
    loop {
        let d = rng.random_range(cfg.d_min..=cfg.d_max);
        let mut nodes = Vec::new();
        let root = grow_rec(rng, cfg, d, Ty::Float, &mut nodes);
        let tree = ExpressionTree { nodes, root };
        if tree.len() <= cfg.max_genes && tree.complexity(weights) <= cfg.max_complexity {
            return tree;
        }
    }
}

const FLOAT_FUNCS: [Gene; 7] = [
    Gene::Add,
    Gene::Sub,
    Gene::Mul,
    Gene::Div,
    Gene::Tanh,
    Gene::Abs,
    Gene::If,
];
const BOOL_FUNCS: [Gene; 4] = [Gene::And, Gene::Or, Gene::Gt, Gene::Lt];

fn grow_rec(
    rng: &mut impl Rng,
    cfg: &GrowConfig,
    d: usize,
    ty: Ty,
    nodes: &mut Vec<Node>,
) -> u32 {
    let gene = if d < 1 {
        match ty {
            Ty::Float => {
                if cfg.n_vars > 0 && rng.random_bool(0.5) {
                    Gene::Var(rng.random_range(0..cfg.n_vars))
                } else {
                    Gene::Const(rng.random_range(-CONST_RANGE..=CONST_RANGE))
                }
            }
            Ty::Bool => Gene::BoolConst(rng.random_bool(0.5)),
        }
    } else {
        match ty {
            Ty::Float => FLOAT_FUNCS[rng.random_range(0..FLOAT_FUNCS.len())],
            Ty::Bool => BOOL_FUNCS[rng.random_range(0..BOOL_FUNCS.len())],
        }
    };
    let arity = gene.arity();
    let mut slots = [NO_CHILD; 3];
    if arity > 0 {
        let deep_slot = rng.random_range(0..arity);
        for i in 0..arity {
            let child_d = if i == deep_slot {
                d - 1
            } else {
                rng.random_range(0..d)
            };
            slots[i] = grow_rec(rng, cfg, child_d, gene.child_ty(i), nodes);
        }
    }
    nodes.push(Node {
        gene,
        children: slots,
    });
    (nodes.len() - 1) as u32
}

/// Multi-output policy: one expression tree per action dimension, outputs
/// clamped to the action bounds before being applied.
#[derive(Clone, Debug)]
pub struct Policy {
    pub trees: Vec<ExpressionTree>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl Policy {
    pub fn new(trees: Vec<ExpressionTree>, action_low: Vec<f64>, action_high: Vec<f64>) -> Self {
        assert_eq!(trees.len(), action_low.len());
        assert_eq!(trees.len(), action_high.len());
        Policy {
            trees,
            action_low,
            action_high,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.trees.len()
    }

    pub fn complexity(&self, weights: &ComplexityWeights) -> u32 {
        self.trees.iter().map(|t| t.complexity(weights)).sum()
    }

    /// Clamped policy output. Non-finite tree outputs map to a bound
    /// (NaN and -inf to the lower bound, +inf to the upper).
    pub fn act(&self, state: &[f64], out: &mut [f64]) {
        for (i, tree) in self.trees.iter().enumerate() {
            let v = tree.eval_unchecked(state);
            out[i] = if v.is_nan() {
                self.action_low[i]
            } else {
                v.clamp(self.action_low[i], self.action_high[i])
            };
        }
    }

    pub fn max_var_index(&self) -> Option<usize> {
        self.trees.iter().filter_map(|t| t.max_var_index()).max()
    }
}

/// Serialized text form: one infix expression per line, preceded by a
/// comment line naming the state variables in order.
pub fn format_policy(policy: &Policy, var_names: &[&str]) -> String {
    let mut out = String::from("# state: ");
    for (i, name) in var_names.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{name}=x{i}"));
    }
    out.push('\n');
    for tree in &policy.trees {
        out.push_str(&text::format_tree(tree));
        out.push('\n');
    }
    out
}

pub fn parse_policy_text(
    src: &str,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
) -> Result<Policy> {
    let mut trees = Vec::new();
    for line in src.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        trees.push(parse_tree(line)?);
    }
    if trees.len() != action_low.len() {
        return Err(Error::Data(format!(
            "policy file has {} expressions, expected {}",
            trees.len(),
            action_low.len()
        )));
    }
    Ok(Policy::new(trees, action_low, action_high))
}

pub use text::format_tree;

#[cfg(test)]
mod tests;
