//! Interpreter for a restricted-attention sequence DSL and the symbolic
//! predecessor-analogy program, used as the algorithmic oracle and
//! attention-pattern reference.
//!
//! Programs are written one operation per line with named intermediates:
//!
//! ```text
//! ppslct = select(chars, const('|'), equals, noncausal)
//! x1_ind = aggregate(ppslct, add(indices, lit(1)), min)
//! ```
//!
//! `select(keys, queries, pred, causality)` marks entry (i, j) when
//! `pred(keys[j], queries[i])` holds (and `j ≤ i` for causal selectors);
//! the predicate takes the key first, matching the reference program's
//! use of `greater_than` to select keys beyond the query separator.

use ndarray::{Array2, ArrayView2};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RaspError {
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("selector shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("computed output index {0} is negative: transformation inapplicable")]
    IndexUnderflow(i64),
    #[error("malformed task string: {0}")]
    BadTask(String),
}

/// A per-position sequence value. Stored as f64 so single-column mean
/// aggregations stay exact on integer inputs.
pub type SeqVal = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorMatrix {
    /// rows = query positions, columns = key positions
    pub cells: Array2<bool>,
    pub causal: bool,
}

impl SelectorMatrix {
    pub fn dim(&self) -> (usize, usize) {
        self.cells.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    Equals,
    GreaterThan,
}

impl Predicate {
    fn apply(self, key: f64, query: f64) -> bool {
        match self {
            Predicate::Equals => key == query,
            Predicate::GreaterThan => key > query,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Min,
    Max,
}

/// QK circuit: entry (i, j) true iff pred(keys[j], queries[i]), masked
/// below the diagonal when causal.
pub fn select(keys: &SeqVal, queries: &SeqVal, pred: Predicate, causal: bool) -> Result<SelectorMatrix, RaspError> {
    if keys.len() != queries.len() {
        return Err(RaspError::LengthMismatch(keys.len(), queries.len()));
    }
    let n = keys.len();
    let mut cells = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in 0..n {
            cells[[i, j]] = pred.apply(keys[j], queries[i]) && (!causal || j <= i);
        }
    }
    Ok(SelectorMatrix { cells, causal })
}

/// Per row, reduces `values` at the selected columns; `default` where a
/// row selects nothing. Length-preserving.
pub fn aggregate(selector: &SelectorMatrix, values: &SeqVal, reduction: Reduction, default: f64) -> Result<SeqVal, RaspError> {
    let (rows, cols) = selector.dim();
    if cols != values.len() {
        return Err(RaspError::LengthMismatch(cols, values.len()));
    }
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let picked: Vec<f64> = (0..cols).filter(|&j| selector.cells[[i, j]]).map(|j| values[j]).collect();
        if picked.is_empty() {
            out.push(default);
        } else {
            out.push(match reduction {
                Reduction::Mean => picked.iter().sum::<f64>() / picked.len() as f64,
                Reduction::Min => picked.iter().cloned().fold(f64::INFINITY, f64::min),
                Reduction::Max => picked.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Textual program interpreter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Value {
    Seq(SeqVal),
    Sel(SelectorMatrix),
}

/// The program environment after a run: every named intermediate.
pub struct ProgramRun {
    env: BTreeMap<String, Value>,
    pub input: String,
}

impl ProgramRun {
    pub fn seq(&self, name: &str) -> Option<&SeqVal> {
        match self.env.get(name) {
            Some(Value::Seq(s)) => Some(s),
            _ => None,
        }
    }

    pub fn selector(&self, name: &str) -> Option<&SelectorMatrix> {
        match self.env.get(name) {
            Some(Value::Sel(s)) => Some(s),
            _ => None,
        }
    }

    pub fn selector_names(&self) -> Vec<&str> {
        self.env
            .iter()
            .filter_map(|(k, v)| matches!(v, Value::Sel(_)).then_some(k.as_str()))
            .collect()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> RaspError {
    RaspError::ParseError { line, message: message.into() }
}

/// Splits `f(a, b, c)` into (`f`, [`a`, `b`, `c`]); arguments may nest.
fn split_call(expr: &str, line: usize) -> Result<(String, Vec<String>), RaspError> {
    let expr = expr.trim();
    let open = expr.find('(');
    let Some(open) = open else {
        // bare identifier
        return Ok((expr.to_string(), Vec::new()));
    };
    if !expr.ends_with(')') {
        return Err(parse_err(line, format!("unbalanced call: `{expr}`")));
    }
    let head = expr[..open].trim().to_string();
    let body = &expr[open + 1..expr.len() - 1];
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in body.chars() {
        match c {
            '(' => {
                depth += 1;
                current.push(c);
            }
            ')' => {
                depth = depth.checked_sub(1).ok_or_else(|| parse_err(line, "unbalanced parentheses"))?;
                current.push(c);
            }
            ',' if depth == 0 => {
                args.push(current.trim().to_string());
                current.clear();
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        args.push(current.trim().to_string());
    }
    Ok((head, args))
}

fn eval_expr(expr: &str, line: usize, env: &BTreeMap<String, Value>, input: &str) -> Result<Value, RaspError> {
    let (head, args) = split_call(expr, line)?;
    let seq_arg = |idx: usize| -> Result<SeqVal, RaspError> {
        match eval_expr(&args[idx], line, env, input)? {
            Value::Seq(s) => Ok(s),
            Value::Sel(_) => Err(parse_err(line, format!("argument {idx} of `{head}` must be a sequence"))),
        }
    };
    let sel_arg = |idx: usize| -> Result<SelectorMatrix, RaspError> {
        match eval_expr(&args[idx], line, env, input)? {
            Value::Sel(s) => Ok(s),
            Value::Seq(_) => Err(parse_err(line, format!("argument {idx} of `{head}` must be a selector"))),
        }
    };
    let need = |n: usize| -> Result<(), RaspError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(parse_err(line, format!("`{head}` takes {n} arguments, got {}", args.len())))
        }
    };
    match head.as_str() {
        "chars" => {
            need(0)?;
            Ok(Value::Seq(input.chars().map(|c| c as u32 as f64).collect()))
        }
        "indices" => {
            need(0)?;
            Ok(Value::Seq((0..input.len()).map(|i| i as f64).collect()))
        }
        "const" => {
            need(1)?;
            let inner = args[0].trim();
            let c = inner
                .strip_prefix('\'')
                .and_then(|s| s.strip_suffix('\''))
                .filter(|s| s.chars().count() == 1)
                .ok_or_else(|| parse_err(line, format!("const takes a quoted character, got `{inner}`")))?;
            let code = c.chars().next().unwrap() as u32 as f64;
            Ok(Value::Seq(vec![code; input.len()]))
        }
        "lit" => {
            need(1)?;
            let v: f64 = args[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad numeric literal `{}`", args[0])))?;
            Ok(Value::Seq(vec![v; input.len()]))
        }
        "add" | "sub" => {
            need(2)?;
            let a = seq_arg(0)?;
            let b = seq_arg(1)?;
            if a.len() != b.len() {
                return Err(RaspError::LengthMismatch(a.len(), b.len()));
            }
            let out = a
                .iter()
                .zip(&b)
                .map(|(x, y)| if head == "add" { x + y } else { x - y })
                .collect();
            Ok(Value::Seq(out))
        }
        "and" | "or" => {
            need(2)?;
            let a = sel_arg(0)?;
            let b = sel_arg(1)?;
            if a.dim() != b.dim() {
                return Err(RaspError::ShapeMismatch(a.dim(), b.dim()));
            }
            let mut cells = a.cells.clone();
            for (c, &bc) in cells.iter_mut().zip(b.cells.iter()) {
                *c = if head == "and" { *c && bc } else { *c || bc };
            }
            Ok(Value::Sel(SelectorMatrix { cells, causal: a.causal && b.causal }))
        }
        "select" => {
            need(4)?;
            let keys = seq_arg(0)?;
            let queries = seq_arg(1)?;
            let pred = match args[2].trim() {
                "equals" => Predicate::Equals,
                "greater_than" => Predicate::GreaterThan,
                other => return Err(parse_err(line, format!("unknown predicate `{other}`"))),
            };
            let causal = match args[3].trim() {
                "causal" => true,
                "noncausal" => false,
                other => return Err(parse_err(line, format!("unknown causality `{other}`"))),
            };
            Ok(Value::Sel(select(&keys, &queries, pred, causal)?))
        }
        "aggregate" => {
            if args.len() != 3 && args.len() != 4 {
                return Err(parse_err(line, format!("`aggregate` takes 3 or 4 arguments, got {}", args.len())));
            }
            let sel = sel_arg(0)?;
            let values = seq_arg(1)?;
            let reduction = match args[2].trim() {
                "mean" => Reduction::Mean,
                "min" => Reduction::Min,
                "max" => Reduction::Max,
                other => return Err(parse_err(line, format!("unknown reduction `{other}`"))),
            };
            let default = if args.len() == 4 {
                args[3].trim().parse().map_err(|_| parse_err(line, format!("bad default `{}`", args[3])))?
            } else {
                0.0
            };
            Ok(Value::Seq(aggregate(&sel, &values, reduction, default)?))
        }
        name if args.is_empty() => env
            .get(name)
            .cloned()
            .ok_or_else(|| parse_err(line, format!("unknown name `{name}`"))),
        other => Err(parse_err(line, format!("unknown operation `{other}`"))),
    }
}

/// Runs a textual program over an input string. Lines are
/// `name = expression`; blank lines and `#` comments are skipped.
pub fn run_program(program: &str, input: &str) -> Result<ProgramRun, RaspError> {
    let mut env = BTreeMap::new();
    for (idx, raw) in program.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, expr) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected `name = expression`, got `{line}`")))?;
        let value = eval_expr(expr, line_no, &env, input)?;
        env.insert(name.trim().to_string(), value);
    }
    Ok(ProgramRun { env, input: input.to_string() })
}

/// The 3-layer predecessor-analogy program: locate separators and first
/// occurrences, resolve the example and query positions in the alphabet,
/// shift by the example's displacement, then emit the answer via a
/// combined causal selector.
pub const PREDECESSOR_PROGRAM: &str = "\
# layer 1: separators and first occurrences
ppslct = select(chars, const('|'), equals, noncausal)
gtslct = select(chars, const('>'), equals, noncausal)
smslct = select(chars, chars, equals, noncausal)
x1_ind = aggregate(ppslct, add(indices, lit(1)), min)
x2_ind = aggregate(gtslct, add(indices, lit(1)), min)
qy_ind = aggregate(ppslct, add(indices, lit(1)), max)
fstind = aggregate(smslct, indices, min)
# layer 2: locate x1, x2 and the query in the alphabet
x1slct = select(indices, x1_ind, equals, noncausal)
x2slct = select(indices, x2_ind, equals, noncausal)
qyslct = select(indices, qy_ind, equals, noncausal)
x1_fst = aggregate(x1slct, fstind, mean)
x2_fst = aggregate(x2slct, fstind, mean)
qy_fst = aggregate(qyslct, fstind, mean)
# MLP step: transformation of the first query element
out_ind = add(sub(x2_fst, x1_fst), qy_fst)
# layer 3: output selector
idslct = select(indices, indices, equals, causal)
o_slct = select(indices, out_ind, equals, causal)
cpslct = select(indices, qy_ind, greater_than, causal)
o_comb = and(or(o_slct, cpslct), idslct)
out = aggregate(o_comb, chars, mean, 0)
";

/// Output of the predecessor program on one task string.
#[derive(Debug)]
pub struct PredecessorOutput {
    /// Answer letters in order.
    pub answer: Vec<char>,
    /// Alphabet positions of the answer letters.
    pub ans_inds: Vec<usize>,
    /// Named selector dumps, layer order.
    pub selectors: Vec<(String, SelectorMatrix)>,
}

fn validate_task_string(s: &str) -> Result<(), RaspError> {
    let parts: Vec<&str> = s.split('|').collect();
    if parts.len() != 3 {
        return Err(RaspError::BadTask(format!("expected `alphabet|ex_in>ex_out|query`, got `{s}`")));
    }
    let (alphabet, example, query) = (parts[0], parts[1], parts[2]);
    let ex: Vec<&str> = example.split('>').collect();
    if ex.len() != 2 {
        return Err(RaspError::BadTask("example must be `ex_in>ex_out`".to_string()));
    }
    for (name, seg) in [("alphabet", alphabet), ("ex_in", ex[0]), ("ex_out", ex[1]), ("query", query)] {
        if seg.is_empty() || !seg.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(RaspError::BadTask(format!("{name} must be non-empty lowercase letters")));
        }
    }
    for seg in [ex[0], ex[1], query] {
        if let Some(c) = seg.chars().find(|c| !alphabet.contains(*c)) {
            return Err(RaspError::BadTask(format!("letter `{c}` is not in the alphabet")));
        }
    }
    Ok(())
}

/// Executes the predecessor program on `alphabet|ex_in>ex_out|query`.
pub fn run_predecessor_program(task_string: &str) -> Result<PredecessorOutput, RaspError> {
    validate_task_string(task_string)?;
    let run = run_program(PREDECESSOR_PROGRAM, task_string)?;
    let out_ind = run.seq("out_ind").expect("program defines out_ind")[0];
    if out_ind < 0.0 {
        return Err(RaspError::IndexUnderflow(out_ind as i64));
    }
    let out = run.seq("out").expect("program defines out");
    let fstind = run.seq("fstind").expect("program defines fstind");
    let mut answer = Vec::new();
    let mut ans_inds = Vec::new();
    for (pos, &code) in out.iter().enumerate() {
        if code != 0.0 {
            answer.push(char::from_u32(code as u32).unwrap());
            ans_inds.push(fstind[pos] as usize);
        }
    }
    let selectors = ["ppslct", "gtslct", "smslct", "x1slct", "x2slct", "qyslct", "idslct", "o_slct", "cpslct", "o_comb"]
        .iter()
        .map(|&name| (name.to_string(), run.selector(name).unwrap().clone()))
        .collect();
    Ok(PredecessorOutput { answer, ans_inds, selectors })
}

/// Mean over rows (with at least one selected cell) of the attention
/// mass landing on the selector's true cells, normalized per row.
/// Bounded in [0, 1].
pub fn compare_selector_to_head(selector: &SelectorMatrix, attention: ArrayView2<f32>) -> Result<f64, RaspError> {
    if selector.dim() != attention.dim() {
        return Err(RaspError::ShapeMismatch(selector.dim(), attention.dim()));
    }
    let (rows, cols) = selector.dim();
    let mut total = 0.0f64;
    let mut counted = 0usize;
    for i in 0..rows {
        let mut on_true = 0.0f64;
        let mut mass = 0.0f64;
        let mut any = false;
        for j in 0..cols {
            let a = attention[[i, j]] as f64;
            mass += a;
            if selector.cells[[i, j]] {
                any = true;
                on_true += a;
            }
        }
        if any && mass > 0.0 {
            total += on_true / mass;
            counted += 1;
        }
    }
    if counted == 0 {
        return Ok(0.0);
    }
    Ok(total / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{Alphabet, LetterString};
    use crate::taskgen::oracle_answer;
    use crate::transform::Transformation;

    const EXAMPLE: &str = "abcdefghij|ghi>fhi|bcd";

    fn chars_of(s: &str) -> SeqVal {
        s.chars().map(|c| c as u32 as f64).collect()
    }

    #[test]
    fn separator_selector_marks_separator_columns() {
        let keys = chars_of(EXAMPLE);
        let queries = vec!['|' as u32 as f64; EXAMPLE.len()];
        let sel = select(&keys, &queries, Predicate::Equals, false).unwrap();
        for i in 0..EXAMPLE.len() {
            for (j, c) in EXAMPLE.chars().enumerate() {
                assert_eq!(sel.cells[[i, j]], c == '|');
            }
        }
    }

    #[test]
    fn causal_selectors_never_attend_forward() {
        let keys = chars_of("aabba");
        let sel = select(&keys, &keys, Predicate::Equals, true).unwrap();
        for i in 0..5 {
            assert!(sel.cells[[i, i]], "diagonal missing at {i}");
            for j in i + 1..5 {
                assert!(!sel.cells[[i, j]]);
            }
        }
    }

    #[test]
    fn select_length_mismatch_errors() {
        let a = vec![1.0, 2.0];
        let b = vec![1.0];
        assert!(matches!(select(&a, &b, Predicate::Equals, false), Err(RaspError::LengthMismatch(2, 1))));
    }

    #[test]
    fn empty_row_aggregation_uses_default() {
        let keys = vec![1.0, 2.0];
        let queries = vec![9.0, 2.0];
        let sel = select(&keys, &queries, Predicate::Equals, false).unwrap();
        let out = aggregate(&sel, &vec![10.0, 20.0], Reduction::Mean, -7.0).unwrap();
        assert_eq!(out, vec![-7.0, 20.0]);
    }

    #[test]
    fn first_occurrence_matches_reference_output() {
        let run = run_program(PREDECESSOR_PROGRAM, EXAMPLE).unwrap();
        let expected: Vec<f64> =
            [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 6, 7, 8, 14, 5, 7, 8, 10, 1, 2, 3].iter().map(|&x| x as f64).collect();
        assert_eq!(run.seq("fstind").unwrap(), &expected);
    }

    #[test]
    fn reference_task_yields_a_c_d() {
        let out = run_predecessor_program(EXAMPLE).unwrap();
        assert_eq!(out.answer, vec!['a', 'c', 'd']);
        assert_eq!(out.ans_inds, vec![0, 2, 3]);
    }

    #[test]
    fn malformed_strings_are_rejected() {
        for bad in ["abc", "abc|de>f", "abc|d>e|f|g", "ABC|a>b|c", "abcdef|ab>bc|xy"] {
            assert!(matches!(run_predecessor_program(bad), Err(RaspError::BadTask(_))), "{bad}");
        }
    }

    #[test]
    fn underflow_when_first_query_letter_has_no_predecessor() {
        // query starts at the first alphabet letter
        let err = run_predecessor_program("abcdefghij|cde>bde|abc").unwrap_err();
        assert!(matches!(err, RaspError::IndexUnderflow(-1)));
    }

    #[test]
    fn agrees_with_oracle_on_standard_alphabet() {
        let alphabet = Alphabet::standard();
        let order = alphabet.order_string();
        for len in 2..=6usize {
            for start in 1..=(26 - len) {
                let query = alphabet.run(start, len).unwrap();
                // fixed example: predecessor of the run starting at 10
                let ex_in = alphabet.run(10, 3).unwrap();
                let ex_out = oracle_answer(Transformation::Predecessor, &alphabet, &ex_in, None).unwrap();
                let s = format!("{}|{}>{}|{}", order, ex_in.compact(), ex_out.compact(), query.compact());
                let got: String = run_predecessor_program(&s).unwrap().answer.iter().collect();
                let want = oracle_answer(Transformation::Predecessor, &alphabet, &query, None).unwrap();
                assert_eq!(got, want.compact(), "start {start} len {len}");
            }
        }
    }

    #[test]
    fn agrees_with_oracle_on_permuted_alphabet() {
        let alphabet = Alphabet::permuted(10, 4242).unwrap();
        let order = alphabet.order_string();
        let ex_in = alphabet.run(7, 4).unwrap();
        let ex_out = oracle_answer(Transformation::Predecessor, &alphabet, &ex_in, None).unwrap();
        for start in [1usize, 5, 20] {
            let query = alphabet.run(start, 4).unwrap();
            let s = format!("{}|{}>{}|{}", order, ex_in.compact(), ex_out.compact(), query.compact());
            let got: String = run_predecessor_program(&s).unwrap().answer.iter().collect();
            let want = oracle_answer(Transformation::Predecessor, &alphabet, &query, None).unwrap();
            assert_eq!(got, want.compact());
        }
        let _ = LetterString::parse("a").unwrap();
    }

    #[test]
    fn selector_similarity_bounds() {
        let keys = chars_of("ab|c");
        let queries = vec!['|' as u32 as f64; 4];
        let sel = select(&keys, &queries, Predicate::Equals, false).unwrap();
        // attention equal to the selector cast to probabilities
        let mut attn = ndarray::Array2::<f32>::zeros(sel.dim());
        for i in 0..4 {
            attn[[i, 2]] = 1.0;
        }
        assert_eq!(compare_selector_to_head(&sel, attn.view()).unwrap(), 1.0);
        // uniform attention: fraction of true cells per row = 1/4
        let uniform = ndarray::Array2::<f32>::from_elem(sel.dim(), 0.25);
        let sim = compare_selector_to_head(&sel, uniform.view()).unwrap();
        assert!((sim - 0.25).abs() < 1e-9);
        let bad = ndarray::Array2::<f32>::zeros((2, 2));
        assert!(matches!(compare_selector_to_head(&sel, bad.view()), Err(RaspError::ShapeMismatch(_, _))));
    }
}
