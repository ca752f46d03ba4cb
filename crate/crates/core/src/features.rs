//! Static feature extraction from textual LLVM IR.
//!
//! The scanner is line oriented: comments (`;` to end of line) and string
//! literal contents are stripped, instructions are recognised inside
//! `define ... { ... }` bodies, and opcodes are bucketed into a fixed schema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, ProgramUnit};

pub const SCHEMA_VERSION: u32 = 1;

pub const FEATURE_NAMES: [&str; 26] = [
    "total_insts",
    "br",
    "condbr",
    "switch",
    "ret",
    "call",
    "phi",
    "select",
    "load",
    "store",
    "alloca",
    "getelementptr",
    "icmp",
    "fcmp",
    "add",
    "sub",
    "mul",
    "div",
    "logic",
    "shift",
    "cast",
    "bitcast",
    "basic_blocks",
    "functions",
    "mean_block_size",
    "max_block_size",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub version: u32,
}

impl FeatureSchema {
    pub fn ir_v1() -> Self {
        FeatureSchema {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            version: SCHEMA_VERSION,
        }
    }
}

/// Raw counts gathered by one scan over a module.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrCounts {
    pub opcodes: [u64; 22],
    pub block_sizes: Vec<u64>,
    pub functions: u64,
}

impl IrCounts {
    pub fn total_insts(&self) -> u64 {
        self.opcodes[0]
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.opcodes.iter().map(|&c| c as f64).collect();
        let blocks = self.block_sizes.len() as u64;
        v.push(blocks as f64);
        v.push(self.functions as f64);
        v.push(if blocks == 0 {
            0.0
        } else {
            self.total_insts() as f64 / blocks as f64
        });
        v.push(self.block_sizes.iter().copied().max().unwrap_or(0) as f64);
        v
    }
}

/// Removes comments and the contents of string literals from one line.
fn clean_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    for c in line.chars() {
        if in_string {
            if c == '"' {
                in_string = false;
                out.push('"');
            }
            continue;
        }
        match c {
            ';' => break,
            '"' => {
                in_string = true;
                out.push('"');
            }
            _ => out.push(c),
        }
    }
    out.trim().to_string()
}

fn is_label(line: &str) -> bool {
    line.ends_with(':') && !line.contains(char::is_whitespace) && !line.starts_with('%')
}

fn opcode_of(line: &str) -> Option<&str> {
    let rest = if line.starts_with('%') || line.starts_with('@') {
        let eq = line.find(" = ")?;
        &line[eq + 3..]
    } else {
        line
    };
    let mut tokens = rest.split_whitespace();
    let mut op = tokens.next()?;
    while matches!(op, "tail" | "musttail" | "notail") {
        op = tokens.next()?;
    }
    Some(op)
}

/// Bucket index in [`IrCounts::opcodes`] for an opcode, excluding slot 0 (total).
fn bucket(op: &str) -> Option<usize> {
    Some(match op {
        "br" => 1,
        "switch" => 3,
        "ret" => 4,
        "call" => 5,
        "phi" => 6,
        "select" => 7,
        "load" => 8,
        "store" => 9,
        "alloca" => 10,
        "getelementptr" => 11,
        "icmp" => 12,
        "fcmp" => 13,
        "add" => 14,
        "sub" => 15,
        "mul" => 16,
        "sdiv" | "udiv" | "fdiv" => 17,
        "and" | "or" | "xor" => 18,
        "shl" | "lshr" | "ashr" => 19,
        "zext" | "sext" | "trunc" => 20,
        "bitcast" => 21,
        _ => return None,
    })
}

/// Scans textual IR and returns raw counts.
pub fn scan_ir(text: &str) -> IrCounts {
    let mut counts = IrCounts::default();
    let mut in_function = false;
    let mut in_bracket = false;
    let mut current: Option<usize> = None;

    for raw in text.lines() {
        let line = clean_line(raw);
        if line.is_empty() {
            continue;
        }
        if !in_function {
            if line.starts_with("define ") && line.ends_with('{') {
                in_function = true;
                counts.functions += 1;
                current = None;
            }
            continue;
        }
        if in_bracket {
            if line.contains(']') {
                in_bracket = false;
            }
            continue;
        }
        if line == "}" {
            in_function = false;
            continue;
        }
        if is_label(&line) {
            counts.block_sizes.push(0);
            current = Some(counts.block_sizes.len() - 1);
            continue;
        }
        let Some(op) = opcode_of(&line) else { continue };
        if matches!(op, "catch" | "filter" | "cleanup") {
            continue;
        }
        let block = match current {
            Some(b) => b,
            None => {
                counts.block_sizes.push(0);
                let b = counts.block_sizes.len() - 1;
                current = Some(b);
                b
            }
        };
        counts.block_sizes[block] += 1;
        counts.opcodes[0] += 1;
        if let Some(b) = bucket(op) {
            counts.opcodes[b] += 1;
        }
        if op == "br" && line.starts_with("br i1 ") {
            counts.opcodes[2] += 1;
        }
        if matches!(op, "switch" | "indirectbr") && line.contains('[') && !line.contains(']') {
            in_bracket = true;
        }
    }
    counts
}

/// Number of instructions in a textual IR module.
pub fn count_instructions(text: &str) -> u64 {
    scan_ir(text).total_insts()
}

/// Computes the schema-ordered feature vector of an IR program.
pub fn extract_features(program: &ProgramUnit) -> Result<FeatureVector> {
    let text = std::str::from_utf8(program.source())
        .map_err(|_| Error::data(format!("program `{}` is not UTF-8 text", program.id)))?;
    let counts = scan_ir(text);
    if counts.total_insts() == 0 {
        return Err(Error::data(format!("empty program `{}`", program.id)));
    }
    FeatureVector::new(counts.to_vector())
}

/// Divides every component by the vector sum. All-zero input is returned unchanged.
pub fn l1_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    if let Some(x) = v.values.iter().find(|x| **x < 0.0) {
        return Err(Error::data(format!("negative feature component {x}")));
    }
    let sum: f64 = v.values.iter().sum();
    if sum == 0.0 {
        return Ok(v.clone());
    }
    FeatureVector::new(v.values.iter().map(|x| x / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(name: &str) -> usize {
        FEATURE_NAMES.iter().position(|n| *n == name).unwrap()
    }

    #[test]
    fn schema_has_26_features() {
        assert_eq!(FEATURE_NAMES.len(), 26);
        assert_eq!(FeatureSchema::ir_v1().names.len(), 26);
    }

    #[test]
    fn direct_count_small_function() {
        let ir = "define void @f(i1 %c) {\n  br i1 %c, label %a, label %b\na:\n  br label %b\nb:\n  ret void\n}\n";
        let p = ProgramUnit::new("f", ir.as_bytes().to_vec());
        let v = extract_features(&p).unwrap().values;
        assert_eq!(v[idx("functions")], 1.0);
        assert_eq!(v[idx("br")], 2.0);
        assert_eq!(v[idx("total_insts")], 3.0);
        assert_eq!(v[idx("condbr")], 1.0);
        assert_eq!(v[idx("basic_blocks")], 3.0);
    }

    #[test]
    fn empty_module_is_an_error() {
        let p = ProgramUnit::new("e", b"; nothing here\ndeclare i32 @puts(i8*)\n".to_vec());
        assert!(extract_features(&p).is_err());
        let p = ProgramUnit::new("e", Vec::new());
        assert!(extract_features(&p).is_err());
    }

    #[test]
    fn comments_and_strings_are_ignored() {
        let ir = concat!(
            "@s = private constant [8 x i8] c\"ret; br\\00\"\n",
            "define i32 @g() {\n",
            "  ; br i1 %x, label %a, label %b\n",
            "  %1 = tail call i32 @h() ; call\n",
            "  ret i32 %1\n",
            "}\n"
        );
        let c = scan_ir(ir);
        assert_eq!(c.total_insts(), 2);
        assert_eq!(c.opcodes[idx("call")], 1);
        assert_eq!(c.opcodes[idx("br")], 0);
    }

    #[test]
    fn switch_cases_are_not_instructions() {
        let ir = concat!(
            "define void @s(i32 %x) {\n",
            "  switch i32 %x, label %d [\n",
            "    i32 0, label %a\n",
            "    i32 1, label %d\n",
            "  ]\n",
            "a:\n",
            "  br label %d\n",
            "d:\n",
            "  ret void\n",
            "}\n"
        );
        let c = scan_ir(ir);
        assert_eq!(c.total_insts(), 3);
        assert_eq!(c.opcodes[idx("switch")], 1);
        assert_eq!(c.block_sizes, vec![1, 1, 1]);
    }

    #[test]
    fn l1_examples() {
        let v = FeatureVector::new(vec![2.0, 2.0, 4.0]).unwrap();
        assert_eq!(l1_normalize(&v).unwrap().values, vec![0.25, 0.25, 0.5]);
        let z = FeatureVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(l1_normalize(&z).unwrap().values, vec![0.0, 0.0, 0.0]);
        let one = FeatureVector::new(vec![5.0]).unwrap();
        assert_eq!(l1_normalize(&one).unwrap().values, vec![1.0]);
        let neg = FeatureVector::new(vec![1.0, -1.0]).unwrap();
        assert!(l1_normalize(&neg).is_err());
    }

    proptest! {
        #[test]
        fn l1_is_scale_invariant(
            v in proptest::collection::vec(0.0f64..1e6, 1..30),
            c in 1e-3f64..1e3,
        ) {
            let a = l1_normalize(&FeatureVector::new(v.clone()).unwrap()).unwrap();
            let scaled = FeatureVector::new(v.iter().map(|x| x * c).collect()).unwrap();
            let b = l1_normalize(&scaled).unwrap();
            let sum: f64 = a.values.iter().sum();
            if v.iter().any(|x| *x > 0.0) {
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
