//! Ideographic Description Sequence parsing.
//!
//! An IDS is written in prefix notation: every Ideographic Description
//! Character (IDC) is followed by its operands, and every other codepoint is an
//! atomic component. The twelve Unicode IDCs are consolidated into ten binary
//! structures by rewriting the two ternary operators right-associatively:
//!
//! ```text
//! ⿲(a, b, c)  =>  ⿰(a, ⿰(b, c))
//! ⿳(a, b, c)  =>  ⿱(a, ⿱(b, c))
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::embed::CodeParams;

/// Deepest operator nesting the parser accepts. Real decompositions stay far
/// below this; the cap keeps hostile input from exhausting the stack.
pub const MAX_NESTING: usize = 64;

const IDC_BLOCK: std::ops::RangeInclusive<char> = '\u{2FF0}'..='\u{2FFF}';
const IDC_LEFT_MIDDLE_RIGHT: char = '\u{2FF2}';
const IDC_ABOVE_MIDDLE_BELOW: char = '\u{2FF3}';

/// One of the ten binary spatial structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StructureOp {
    /// ⿰
    LeftRight,
    /// ⿱
    AboveBelow,
    /// ⿴
    FullSurround,
    /// ⿵
    SurroundAbove,
    /// ⿶
    SurroundBelow,
    /// ⿷
    SurroundLeft,
    /// ⿸
    SurroundUpperLeft,
    /// ⿹
    SurroundUpperRight,
    /// ⿺
    SurroundLowerLeft,
    /// ⿻
    Overlaid,
}

impl StructureOp {
    pub const COUNT: usize = 10;

    /// All structures in enumeration order. The position of each variant is
    /// its [`index`](Self::index), which fixes its canonical structure code.
    pub const ALL: [StructureOp; Self::COUNT] = [
        StructureOp::LeftRight,
        StructureOp::AboveBelow,
        StructureOp::FullSurround,
        StructureOp::SurroundAbove,
        StructureOp::SurroundBelow,
        StructureOp::SurroundLeft,
        StructureOp::SurroundUpperLeft,
        StructureOp::SurroundUpperRight,
        StructureOp::SurroundLowerLeft,
        StructureOp::Overlaid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// The Unicode IDC for this structure.
    pub fn idc(self) -> char {
        match self {
            StructureOp::LeftRight => '⿰',
            StructureOp::AboveBelow => '⿱',
            StructureOp::FullSurround => '⿴',
            StructureOp::SurroundAbove => '⿵',
            StructureOp::SurroundBelow => '⿶',
            StructureOp::SurroundLeft => '⿷',
            StructureOp::SurroundUpperLeft => '⿸',
            StructureOp::SurroundUpperRight => '⿹',
            StructureOp::SurroundLowerLeft => '⿺',
            StructureOp::Overlaid => '⿻',
        }
    }

    pub fn from_idc(c: char) -> Option<Self> {
        Self::ALL.iter().copied().find(|op| op.idc() == c)
    }
}

impl fmt::Display for StructureOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.idc())
    }
}

/// Name of an atomic component: a radical, a single-radical character, or any
/// non-CJK symbol such as a Latin letter or digit.
///
/// Cloning is a reference-count bump, so trees can share component names.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RadicalId(Arc<str>);

impl RadicalId {
    pub fn new(name: &str) -> Self {
        RadicalId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for RadicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for RadicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RadicalId {
    fn from(s: &str) -> Self {
        RadicalId::new(s)
    }
}

impl From<char> for RadicalId {
    fn from(c: char) -> Self {
        RadicalId::new(c.encode_utf8(&mut [0; 4]))
    }
}

impl Serialize for RadicalId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

/// Binary decomposition tree: structures at internal nodes, radicals at leaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DecompTree {
    Radical(RadicalId),
    Structure {
        op: StructureOp,
        left: Box<DecompTree>,
        right: Box<DecompTree>,
    },
}

impl DecompTree {
    pub fn radical(id: impl Into<RadicalId>) -> Self {
        DecompTree::Radical(id.into())
    }

    pub fn node(op: StructureOp, left: DecompTree, right: DecompTree) -> Self {
        DecompTree::Structure {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Number of levels; a lone radical has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            DecompTree::Radical(_) => 1,
            DecompTree::Structure { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            DecompTree::Radical(_) => 1,
            DecompTree::Structure { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&RadicalId> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                DecompTree::Radical(id) => out.push(id),
                DecompTree::Structure { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Prefix-notation IDS for this tree. Atoms longer than one codepoint are
    /// written as `&name;` entities so the output always re-parses.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            DecompTree::Radical(id) => push_atom(out, id.as_str()),
            DecompTree::Structure { op, left, right } => {
                out.push(op.idc());
                left.render_into(out);
                right.render_into(out);
            }
        }
    }
}

fn push_atom(out: &mut String, name: &str) {
    let mut chars = name.chars();
    match (chars.next(), chars.next()) {
        (Some(_), None) => out.push_str(name),
        _ => {
            out.push('&');
            out.push_str(name);
            out.push(';');
        }
    }
}

impl fmt::Display for DecompTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Operator of an IDS node before ternary consolidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Idc {
    Binary(StructureOp),
    /// ⿲
    LeftMiddleRight,
    /// ⿳
    AboveMiddleBelow,
}

impl Idc {
    pub fn arity(self) -> usize {
        match self {
            Idc::Binary(_) => 2,
            Idc::LeftMiddleRight | Idc::AboveMiddleBelow => 3,
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            IDC_LEFT_MIDDLE_RIGHT => Some(Idc::LeftMiddleRight),
            IDC_ABOVE_MIDDLE_BELOW => Some(Idc::AboveMiddleBelow),
            _ => StructureOp::from_idc(c).map(Idc::Binary),
        }
    }
}

/// IDS tree over all twelve operators, as written in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawIds {
    Atom(RadicalId),
    Node { idc: Idc, children: Vec<RawIds> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdsError {
    #[error("malformed IDS at byte {position}: {reason}")]
    MalformedIds { position: usize, reason: String },
    #[error("unknown description operator U+{:04X} at byte {position}", *.codepoint as u32)]
    UnknownOperator { codepoint: char, position: usize },
}

fn malformed(position: usize, reason: impl Into<String>) -> IdsError {
    IdsError::MalformedIds {
        position,
        reason: reason.into(),
    }
}

enum Token {
    Op(Idc),
    Atom(RadicalId),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, IdsError> {
    let mut tokens = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some((pos, c)) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        if IDC_BLOCK.contains(&c) {
            match Idc::from_char(c) {
                Some(idc) => tokens.push((pos, Token::Op(idc))),
                None => {
                    return Err(IdsError::UnknownOperator {
                        codepoint: c,
                        position: pos,
                    })
                }
            }
        } else if c == '&' {
            let mut name = String::new();
            let mut closed = false;
            for (_, n) in iter.by_ref() {
                if n == ';' {
                    closed = true;
                    break;
                }
                name.push(n);
            }
            if !closed || name.is_empty() || name.chars().any(|n| n.is_whitespace() || n == '&') {
                return Err(malformed(pos, "unterminated or empty entity reference"));
            }
            tokens.push((pos, Token::Atom(RadicalId::new(&name))));
        } else {
            tokens.push((pos, Token::Atom(RadicalId::from(c))));
        }
    }
    Ok(tokens)
}

/// Parse an IDS string without consolidating the ternary operators.
pub fn parse_raw(text: &str) -> Result<RawIds, IdsError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(malformed(0, "empty sequence"));
    }

    // Open operator frames awaiting operands.
    let mut stack: Vec<(Idc, Vec<RawIds>)> = Vec::new();
    let mut root = None;
    for (pos, token) in tokens {
        if root.is_some() {
            return Err(malformed(pos, "trailing input after complete sequence"));
        }
        let mut done = match token {
            Token::Op(idc) => {
                if stack.len() >= MAX_NESTING {
                    return Err(malformed(pos, "operator nesting too deep"));
                }
                stack.push((idc, Vec::with_capacity(idc.arity())));
                continue;
            }
            Token::Atom(id) => RawIds::Atom(id),
        };
        loop {
            match stack.last_mut() {
                None => {
                    root = Some(done);
                    break;
                }
                Some((idc, children)) => {
                    children.push(done);
                    if children.len() < idc.arity() {
                        break;
                    }
                    let (idc, children) = stack.pop().expect("frame present");
                    done = RawIds::Node { idc, children };
                }
            }
        }
    }
    if !stack.is_empty() {
        return Err(malformed(
            text.len(),
            "sequence ends before all operands are given",
        ));
    }
    Ok(root.expect("non-empty token stream yields a root"))
}

/// Consolidate ⿲ and ⿳ into nested binary structures, bottom-up.
pub fn rewrite_ternary(raw: RawIds) -> DecompTree {
    match raw {
        RawIds::Atom(id) => DecompTree::Radical(id),
        RawIds::Node { idc, children } => {
            let mut children: Vec<DecompTree> = children.into_iter().map(rewrite_ternary).collect();
            let op = match idc {
                Idc::Binary(op) => op,
                Idc::LeftMiddleRight => StructureOp::LeftRight,
                Idc::AboveMiddleBelow => StructureOp::AboveBelow,
            };
            let mut acc = children.pop().expect("nodes have operands");
            while let Some(prev) = children.pop() {
                acc = DecompTree::node(op, prev, acc);
            }
            acc
        }
    }
}

/// Parse an IDS string into a binary decomposition tree.
pub fn parse_ids(text: &str) -> Result<DecompTree, IdsError> {
    parse_raw(text).map(rewrite_ternary)
}

/// A reason a tree cannot be encoded under a given [`CodeParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Violation {
    DepthExceeded { actual: usize, limit: usize },
    RadicalOverflow { actual: usize, limit: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DepthExceeded { actual, limit } => {
                write!(f, "tree depth {actual} exceeds limit {limit}")
            }
            Violation::RadicalOverflow { actual, limit } => {
                write!(f, "{actual} radicals exceed limit {limit}")
            }
        }
    }
}

/// Check a tree against the depth and radical-count limits. An empty result
/// means the tree is encodable.
pub fn validate(tree: &DecompTree, params: &CodeParams) -> Vec<Violation> {
    let mut report = Vec::new();
    let depth = tree.depth();
    if depth > params.depth() {
        report.push(Violation::DepthExceeded {
            actual: depth,
            limit: params.depth(),
        });
    }
    let leaves = tree.leaf_count();
    if leaves > params.max_radicals() {
        report.push(Violation::RadicalOverflow {
            actual: leaves,
            limit: params.max_radicals(),
        });
    }
    report
}

/// One line of an IDS file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdsRecord {
    pub line: usize,
    pub character: String,
    pub tree: DecompTree,
}

#[derive(Debug, Error)]
pub enum IdsFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `<character>\\t<IDS>`")]
    Format { line: usize },
    #[error("line {line} ({character}): {source}")]
    Parse {
        line: usize,
        character: String,
        #[source]
        source: IdsError,
    },
    #[error("line {line}: duplicate character {character} (first defined on line {first_line})")]
    DuplicateCharacter {
        character: String,
        line: usize,
        first_line: usize,
    },
}

/// Parse the contents of an IDS file: one `<character>\t<IDS>` record per
/// line, `#` comments and blank lines ignored.
pub fn parse_ids_file(text: &str) -> Result<Vec<IdsRecord>, IdsFileError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.trim_end_matches('\r');
        if content.trim().is_empty() || content.starts_with('#') {
            continue;
        }
        let (character, ids) = content
            .split_once('\t')
            .ok_or(IdsFileError::Format { line })?;
        let character = character.trim();
        if character.is_empty() || ids.trim().is_empty() {
            return Err(IdsFileError::Format { line });
        }
        if let Some(&first_line) = seen.get(character) {
            return Err(IdsFileError::DuplicateCharacter {
                character: character.to_string(),
                line,
                first_line,
            });
        }
        let tree = parse_ids(ids).map_err(|source| IdsFileError::Parse {
            line,
            character: character.to_string(),
            source,
        })?;
        seen.insert(character.to_string(), line);
        records.push(IdsRecord {
            line,
            character: character.to_string(),
            tree,
        });
    }
    Ok(records)
}

pub fn read_ids_file(path: &Path) -> Result<Vec<IdsRecord>, IdsFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| IdsFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ids_file(&text)
}
