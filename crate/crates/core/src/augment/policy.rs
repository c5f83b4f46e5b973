use std::fmt::Write as _;

use super::ops::TransformKind;
use crate::error::{Error, Result};

/// Magnitude bins used by AutoAugment policies.
pub const AUTO_AUGMENT_BINS: usize = 10;

const IMAGENET_POLICY: &str = include_str!("../../data/autoaugment_imagenet.policy");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOp {
    pub kind: TransformKind,
    pub prob: f32,
    pub bin: usize,
}

/// AutoAugment sub-policies, each applied as a whole.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    sub_policies: Vec<Vec<PolicyOp>>,
}

impl PolicyTable {
    pub fn new(sub_policies: Vec<Vec<PolicyOp>>) -> Result<Self> {
        if sub_policies.is_empty() {
            return Err(Error::PolicyFormat {
                line: 0,
                detail: "table has no sub-policies".into(),
            });
        }
        for (i, sp) in sub_policies.iter().enumerate() {
            if sp.is_empty() {
                return Err(Error::PolicyFormat {
                    line: i + 1,
                    detail: "empty sub-policy".into(),
                });
            }
            for op in sp {
                check_op(op, i + 1)?;
            }
        }
        Ok(PolicyTable { sub_policies })
    }

    /// The 25-entry ImageNet policy bundled with the crate.
    pub fn imagenet() -> Self {
        Self::parse(IMAGENET_POLICY).expect("bundled policy is well formed")
    }

    /// Parse `op:prob:bin;op:prob:bin` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut subs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut ops = Vec::new();
            for entry in line.split(';') {
                let fields: Vec<&str> = entry.trim().split(':').collect();
                if fields.len() != 3 {
                    return Err(Error::PolicyFormat {
                        line: line_no,
                        detail: format!("expected op:prob:magnitude, got {entry:?}"),
                    });
                }
                let kind: TransformKind = fields[0].parse().map_err(|_| Error::PolicyFormat {
                    line: line_no,
                    detail: format!("unknown transform {:?}", fields[0]),
                })?;
                let prob: f32 = fields[1].trim().parse().map_err(|_| Error::PolicyFormat {
                    line: line_no,
                    detail: format!("bad probability {:?}", fields[1]),
                })?;
                let bin: usize = fields[2].trim().parse().map_err(|_| Error::PolicyFormat {
                    line: line_no,
                    detail: format!("bad magnitude {:?}", fields[2]),
                })?;
                let op = PolicyOp { kind, prob, bin };
                check_op(&op, line_no)?;
                ops.push(op);
            }
            subs.push(ops);
        }
        Self::new(subs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sp in &self.sub_policies {
            let entries: Vec<String> = sp.iter().map(|op| format!("{}:{}:{}", op.kind, op.prob, op.bin)).collect();
            let _ = writeln!(out, "{}", entries.join(";"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sub_policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_policies.is_empty()
    }

    pub fn sub_policy(&self, i: usize) -> &[PolicyOp] {
        &self.sub_policies[i]
    }
}

fn check_op(op: &PolicyOp, line: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&op.prob) {
        return Err(Error::PolicyFormat {
            line,
            detail: format!("probability {} outside [0,1]", op.prob),
        });
    }
    if op.bin >= AUTO_AUGMENT_BINS {
        return Err(Error::PolicyFormat {
            line,
            detail: format!("magnitude bin {} outside [0,{}]", op.bin, AUTO_AUGMENT_BINS - 1),
        });
    }
    Ok(())
}
