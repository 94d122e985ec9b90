//! SMILES-subset parser.
//!
//! Supported grammar: organic-subset atoms (B C N O P S F Cl Br I),
//! aromatic lowercase (b c n o p s), bracket atoms with charge and explicit
//! hydrogen count, bond symbols `- = # :`, branches, ring closures 1-9 and
//! %nn, and dot-separated components. Stereo markers (`/ \ @`), isotopes
//! and wildcards are rejected, not dropped.

use super::{Atom, Bond, BondOrder, Element, MolGraph};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("empty input")]
    EmptyInput,
    #[error("unmatched parenthesis")]
    UnmatchedParen,
    #[error("unmatched ring bond {0}")]
    UnmatchedRingBond(u32),
    #[error("ring bond {0} closes onto its opening atom")]
    RingBondToSelf(u32),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(&'static str),
    #[error("malformed bracket atom")]
    MalformedBracket,
    #[error("formal charge {0} out of range (|charge| <= 4)")]
    ChargeOutOfRange(i32),
    #[error("bond symbol with no atom to bind")]
    DanglingBond,
    #[error("conflicting ring-closure bond orders")]
    BondOrderConflict,
    #[error("aromatic bond between non-aromatic atoms")]
    AromaticBondOnNonAromatic,
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("SMILES parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn err<T>(offset: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { offset, kind })
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    edge_set: HashMap<(usize, usize), ()>,
    /// Atom the next bond attaches from; `None` right after `.` or at start.
    prev: Option<usize>,
    /// Branch return points.
    stack: Vec<(usize, usize)>, // (atom, byte offset of '(')
    /// Bond symbol waiting for its second atom or ring digit.
    pending: Option<(BondOrder, usize)>,
    /// Open ring closures: digit -> (atom, pending order, byte offset).
    rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            bytes: s.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            edge_set: HashMap::new(),
            prev: None,
            stack: Vec::new(),
            pending: None,
            rings: HashMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        offset: usize,
    ) -> Result<(), ParseError> {
        if a == b {
            return err(offset, ParseErrorKind::RingBondToSelf(0));
        }
        let key = (a.min(b), a.max(b));
        if self.edge_set.insert(key, ()).is_some() {
            return err(offset, ParseErrorKind::DuplicateBond(key.0, key.1));
        }
        if order == BondOrder::Aromatic
            && !(self.atoms[a].aromatic && self.atoms[b].aromatic)
        {
            return err(offset, ParseErrorKind::AromaticBondOnNonAromatic);
        }
        self.bonds.push(Bond {
            endpoints: key,
            order,
        });
        Ok(())
    }

    /// Default order when no bond symbol is written.
    fn implied_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn finish_atom(&mut self, atom: Atom, offset: usize) -> Result<(), ParseError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        match (self.prev, self.pending.take()) {
            (Some(p), Some((order, boff))) => {
                self.add_bond(p, idx, order, boff)?;
            }
            (Some(p), None) => {
                let order = self.implied_order(p, idx);
                self.add_bond(p, idx, order, offset)?;
            }
            (None, Some((_, boff))) => {
                return err(boff, ParseErrorKind::DanglingBond);
            }
            (None, None) => {}
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, digit: u32, offset: usize) -> Result<(), ParseError> {
        let Some(current) = self.prev else {
            let c = char::from_digit(digit % 10, 10).unwrap_or('%');
            return err(offset, ParseErrorKind::UnexpectedChar(c));
        };
        let pending = self.pending.take().map(|(o, _)| o);
        if let Some((open_atom, open_order, _)) = self.rings.remove(&digit) {
            if open_atom == current {
                return err(offset, ParseErrorKind::RingBondToSelf(digit));
            }
            let order = match (open_order, pending) {
                (Some(a), Some(b)) if a != b => {
                    return err(offset, ParseErrorKind::BondOrderConflict)
                }
                (Some(a), _) => a,
                (None, Some(b)) => b,
                (None, None) => self.implied_order(open_atom, current),
            };
            self.add_bond(open_atom, current, order, offset)?;
        } else {
            self.rings.insert(digit, (current, pending, offset));
        }
        Ok(())
    }

    fn parse_bracket(&mut self, open_offset: usize) -> Result<(), ParseError> {
        // '[' already consumed
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return err(self.pos, ParseErrorKind::UnsupportedFeature("isotope"));
        }
        let sym_offset = self.pos;
        let (element, aromatic) = match self.bump() {
            Some(b'@') => return err(sym_offset, ParseErrorKind::UnsupportedFeature("stereo")),
            Some(b'*') => {
                return err(sym_offset, ParseErrorKind::UnsupportedFeature("wildcard atom"))
            }
            Some(c @ (b'b' | b'c' | b'n' | b'o' | b'p' | b's')) => {
                let e = match c {
                    b'b' => Element::B,
                    b'c' => Element::C,
                    b'n' => Element::N,
                    b'o' => Element::O,
                    b'p' => Element::P,
                    _ => Element::S,
                };
                (e, true)
            }
            Some(c) if c.is_ascii_uppercase() => {
                let mut sym = (c as char).to_string();
                // two-letter symbols take the lowercase only when it forms
                // a whitelisted element; `[CH4]` keeps H for the h-count
                if let Some(l) = self.peek() {
                    if l.is_ascii_lowercase() {
                        let two = format!("{}{}", c as char, l as char);
                        match two.as_str() {
                            "Cl" | "Br" => {
                                self.bump();
                                sym = two;
                            }
                            _ => {
                                self.bump();
                                return err(
                                    sym_offset,
                                    ParseErrorKind::UnknownAtom(two),
                                );
                            }
                        }
                    }
                }
                let e = match sym.as_str() {
                    "B" => Element::B,
                    "C" => Element::C,
                    "N" => Element::N,
                    "O" => Element::O,
                    "P" => Element::P,
                    "S" => Element::S,
                    "F" => Element::F,
                    "Cl" => Element::Cl,
                    "Br" => Element::Br,
                    "I" => Element::I,
                    "H" => Element::H,
                    _ => return err(sym_offset, ParseErrorKind::UnknownAtom(sym)),
                };
                (e, false)
            }
            Some(c) => return err(sym_offset, ParseErrorKind::UnexpectedChar(c as char)),
            None => return err(open_offset, ParseErrorKind::MalformedBracket),
        };

        let mut explicit_h: u8 = 0;
        let mut charge: i32 = 0;
        let mut saw_charge = false;
        loop {
            match self.peek() {
                Some(b'@') => {
                    return err(self.pos, ParseErrorKind::UnsupportedFeature("stereo"))
                }
                Some(b'H') if !saw_charge => {
                    self.bump();
                    let mut count = 1u32;
                    if matches!(self.peek(), Some(b'0'..=b'9')) {
                        count = 0;
                        while let Some(d @ b'0'..=b'9') = self.peek() {
                            self.bump();
                            count = count * 10 + (d - b'0') as u32;
                        }
                    }
                    if count > 9 {
                        return err(self.pos, ParseErrorKind::MalformedBracket);
                    }
                    explicit_h = count as u8;
                }
                Some(sign @ (b'+' | b'-')) => {
                    let sign_offset = self.pos;
                    self.bump();
                    saw_charge = true;
                    let unit = if sign == b'+' { 1 } else { -1 };
                    let mut magnitude = 1i32;
                    if matches!(self.peek(), Some(b'0'..=b'9')) {
                        magnitude = 0;
                        while let Some(d @ b'0'..=b'9') = self.peek() {
                            self.bump();
                            magnitude = magnitude * 10 + (d - b'0') as i32;
                            if magnitude > 99 {
                                break;
                            }
                        }
                    } else {
                        while self.peek() == Some(sign) {
                            self.bump();
                            magnitude += 1;
                        }
                    }
                    charge += unit * magnitude;
                    if charge.abs() > 4 {
                        return err(sign_offset, ParseErrorKind::ChargeOutOfRange(charge));
                    }
                }
                Some(b']') => {
                    self.bump();
                    break;
                }
                Some(c) => return err(self.pos, ParseErrorKind::UnexpectedChar(c as char)),
                None => return err(open_offset, ParseErrorKind::MalformedBracket),
            }
        }

        self.finish_atom(
            Atom {
                element,
                formal_charge: charge as i8,
                aromatic,
                explicit_h: Some(explicit_h),
            },
            open_offset,
        )
    }

    fn run(mut self) -> Result<MolGraph, ParseError> {
        if self.bytes.is_empty() {
            return err(0, ParseErrorKind::EmptyInput);
        }
        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                b'[' => {
                    self.bump();
                    self.parse_bracket(offset)?;
                }
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                    self.bump();
                    let e = match c {
                        b'b' => Element::B,
                        b'c' => Element::C,
                        b'n' => Element::N,
                        b'o' => Element::O,
                        b'p' => Element::P,
                        _ => Element::S,
                    };
                    self.finish_atom(
                        Atom {
                            element: e,
                            formal_charge: 0,
                            aromatic: true,
                            explicit_h: None,
                        },
                        offset,
                    )?;
                }
                b'A'..=b'Z' => {
                    self.bump();
                    let element = match c {
                        b'C' if self.peek() == Some(b'l') => {
                            self.bump();
                            Element::Cl
                        }
                        b'B' if self.peek() == Some(b'r') => {
                            self.bump();
                            Element::Br
                        }
                        b'B' => Element::B,
                        b'C' => Element::C,
                        b'N' => Element::N,
                        b'O' => Element::O,
                        b'P' => Element::P,
                        b'S' => Element::S,
                        b'F' => Element::F,
                        b'I' => Element::I,
                        _ => {
                            return err(
                                offset,
                                ParseErrorKind::UnknownAtom((c as char).to_string()),
                            )
                        }
                    };
                    self.finish_atom(
                        Atom {
                            element,
                            formal_charge: 0,
                            aromatic: false,
                            explicit_h: None,
                        },
                        offset,
                    )?;
                }
                b'-' | b'=' | b'#' | b':' => {
                    self.bump();
                    if self.pending.is_some() {
                        return err(offset, ParseErrorKind::DanglingBond);
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, offset));
                }
                b'(' => {
                    self.bump();
                    if self.pending.is_some() {
                        return err(offset, ParseErrorKind::DanglingBond);
                    }
                    match self.prev {
                        Some(p) => self.stack.push((p, offset)),
                        None => return err(offset, ParseErrorKind::UnmatchedParen),
                    }
                }
                b')' => {
                    self.bump();
                    if self.pending.is_some() {
                        return err(offset, ParseErrorKind::DanglingBond);
                    }
                    match self.stack.pop() {
                        Some((p, _)) => self.prev = Some(p),
                        None => return err(offset, ParseErrorKind::UnmatchedParen),
                    }
                }
                b'0'..=b'9' => {
                    self.bump();
                    self.ring_closure((c - b'0') as u32, offset)?;
                }
                b'%' => {
                    self.bump();
                    let d1 = self.bump();
                    let d2 = self.bump();
                    match (d1, d2) {
                        (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                            let n = (a - b'0') as u32 * 10 + (b - b'0') as u32;
                            self.ring_closure(n, offset)?;
                        }
                        _ => return err(offset, ParseErrorKind::UnexpectedChar('%')),
                    }
                }
                b'.' => {
                    self.bump();
                    if self.pending.is_some() {
                        return err(offset, ParseErrorKind::DanglingBond);
                    }
                    self.prev = None;
                }
                b'/' | b'\\' | b'@' => {
                    return err(offset, ParseErrorKind::UnsupportedFeature("stereo"))
                }
                b'*' => {
                    return err(offset, ParseErrorKind::UnsupportedFeature("wildcard atom"))
                }
                other => {
                    return err(offset, ParseErrorKind::UnexpectedChar(other as char))
                }
            }
        }

        if let Some((_, boff)) = self.pending {
            return err(boff, ParseErrorKind::DanglingBond);
        }
        if let Some(&(_, open_offset)) = self.stack.last() {
            return err(open_offset, ParseErrorKind::UnmatchedParen);
        }
        if let Some((&digit, &(_, _, off))) = self.rings.iter().min_by_key(|(_, v)| v.2) {
            return err(off, ParseErrorKind::UnmatchedRingBond(digit));
        }
        if self.atoms.is_empty() {
            return err(0, ParseErrorKind::EmptyInput);
        }
        Ok(MolGraph {
            atoms: self.atoms,
            bonds: self.bonds,
        })
    }
}

/// Parses a SMILES string into a molecular graph, or reports the byte
/// offset and reason of the first violation. Invalid input never yields a
/// graph that breaks the `MolGraph` invariants.
pub fn parse_smiles(s: &str) -> Result<MolGraph, ParseError> {
    Parser::new(s).run()
}
