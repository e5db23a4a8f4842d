use std::fmt;

use serde::{Serialize, Serializer};

/// Widths are in half-l units: a full hash output is 2, a half is 1.
pub type Width = u32;

/// Symbolic message. Construct through the helper functions, which return
/// canonical forms; the derived `Ord` is the total term order used for XOR
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Zero(Width),
    Atom {
        name: String,
        width: Width,
    },
    Nonce {
        name: String,
        session: u32,
        width: Width,
    },
    /// Placeholder in protocol specs, replaced at instantiation.
    Var {
        name: String,
        width: Width,
    },
    Hash {
        func: String,
        width: Width,
        arg: Box<Term>,
    },
    Concat(Box<Term>, Box<Term>),
    Left(Box<Term>),
    Right(Box<Term>),
    Xor(Vec<Term>),
}

pub fn atom(name: impl Into<String>, width: Width) -> Term {
    Term::Atom {
        name: name.into(),
        width,
    }
}

pub fn nonce(name: impl Into<String>, session: u32, width: Width) -> Term {
    Term::Nonce {
        name: name.into(),
        session,
        width,
    }
}

pub fn var(name: impl Into<String>, width: Width) -> Term {
    Term::Var {
        name: name.into(),
        width,
    }
}

pub fn hash(func: impl Into<String>, width: Width, arg: Term) -> Term {
    normalize(&Term::Hash {
        func: func.into(),
        width,
        arg: Box::new(arg),
    })
}

pub fn concat(a: Term, b: Term) -> Term {
    normalize(&Term::Concat(Box::new(a), Box::new(b)))
}

pub fn left(t: Term) -> Term {
    normalize(&Term::Left(Box::new(t)))
}

pub fn right(t: Term) -> Term {
    normalize(&Term::Right(Box::new(t)))
}

pub fn xor(terms: impl IntoIterator<Item = Term>) -> Term {
    normalize(&Term::Xor(terms.into_iter().collect()))
}

impl Term {
    pub fn width(&self) -> Width {
        match self {
            Term::Zero(w) => *w,
            Term::Atom { width, .. } | Term::Nonce { width, .. } | Term::Var { width, .. } => {
                *width
            }
            Term::Hash { width, .. } => *width,
            Term::Concat(a, b) => a.width() + b.width(),
            Term::Left(x) | Term::Right(x) => x.width() / 2,
            Term::Xor(ts) => ts.first().map_or(0, Term::width),
        }
    }

    /// Checks XOR operands agree in width and projections split evenly.
    pub fn well_formed(&self) -> Result<(), String> {
        match self {
            Term::Hash { arg, .. } => arg.well_formed(),
            Term::Concat(a, b) => {
                a.well_formed()?;
                b.well_formed()
            }
            Term::Left(x) | Term::Right(x) => {
                x.well_formed()?;
                if x.width() % 2 == 1 {
                    return Err(format!("projection of odd-width term {x}"));
                }
                Ok(())
            }
            Term::Xor(ts) => {
                let w = self.width();
                for t in ts {
                    t.well_formed()?;
                    if t.width() != w {
                        return Err(format!("xor operands of widths {w} and {}", t.width()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Node count.
    pub fn size(&self) -> usize {
        match self {
            Term::Hash { arg, .. } => 1 + arg.size(),
            Term::Concat(a, b) => 1 + a.size() + b.size(),
            Term::Left(x) | Term::Right(x) => 1 + x.size(),
            Term::Xor(ts) => 1 + ts.iter().map(Term::size).sum::<usize>(),
            _ => 1,
        }
    }

    /// Built by a constructor the intruder can apply itself.
    pub fn is_compound(&self) -> bool {
        matches!(
            self,
            Term::Hash { .. } | Term::Concat(..) | Term::Left(_) | Term::Right(_)
        )
    }

    /// XOR summands of a normalized term.
    pub fn summands(&self) -> Vec<&Term> {
        match self {
            Term::Xor(ts) => ts.iter().collect(),
            Term::Zero(_) => Vec::new(),
            t => vec![t],
        }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var { name, .. } => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Term::Hash { arg, .. } | Term::Left(arg) | Term::Right(arg) => arg.vars(out),
            Term::Concat(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Term::Xor(ts) => ts.iter().for_each(|t| t.vars(out)),
            _ => {}
        }
    }

    /// Replaces leaves for which `f` returns a term, then normalizes.
    pub fn substitute(&self, f: &dyn Fn(&Term) -> Option<Term>) -> Term {
        normalize(&self.map_leaves(f))
    }

    fn map_leaves(&self, f: &dyn Fn(&Term) -> Option<Term>) -> Term {
        match self {
            Term::Hash { func, width, arg } => Term::Hash {
                func: func.clone(),
                width: *width,
                arg: Box::new(arg.map_leaves(f)),
            },
            Term::Concat(a, b) => {
                Term::Concat(Box::new(a.map_leaves(f)), Box::new(b.map_leaves(f)))
            }
            Term::Left(x) => Term::Left(Box::new(x.map_leaves(f))),
            Term::Right(x) => Term::Right(Box::new(x.map_leaves(f))),
            Term::Xor(ts) => Term::Xor(ts.iter().map(|t| t.map_leaves(f)).collect()),
            leaf => f(leaf).unwrap_or_else(|| leaf.clone()),
        }
    }
}

/// Canonical form under the XOR axioms and the projection rules.
pub fn normalize(t: &Term) -> Term {
    match t {
        Term::Zero(_) | Term::Atom { .. } | Term::Nonce { .. } | Term::Var { .. } => t.clone(),
        Term::Hash { func, width, arg } => Term::Hash {
            func: func.clone(),
            width: *width,
            arg: Box::new(normalize(arg)),
        },
        Term::Concat(a, b) => {
            let (a, b) = (normalize(a), normalize(b));
            if let (Term::Left(x), Term::Right(y)) = (&a, &b) {
                if x == y {
                    return (**x).clone();
                }
            }
            Term::Concat(Box::new(a), Box::new(b))
        }
        Term::Left(x) => {
            let x = normalize(x);
            match x {
                Term::Concat(a, b) if a.width() == b.width() => *a,
                x => Term::Left(Box::new(x)),
            }
        }
        Term::Right(x) => {
            let x = normalize(x);
            match x {
                Term::Concat(a, b) if a.width() == b.width() => *b,
                x => Term::Right(Box::new(x)),
            }
        }
        Term::Xor(ts) => {
            let width = t.width();
            let mut flat = Vec::with_capacity(ts.len());
            for c in ts {
                match normalize(c) {
                    Term::Xor(inner) => flat.extend(inner),
                    Term::Zero(_) => {}
                    c => flat.push(c),
                }
            }
            flat.sort();
            let mut out: Vec<Term> = Vec::with_capacity(flat.len());
            for c in flat {
                if out.last() == Some(&c) {
                    out.pop();
                } else {
                    out.push(c);
                }
            }
            match out.len() {
                0 => Term::Zero(width),
                1 => out.pop().expect("one element"),
                _ => Term::Xor(out),
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Zero(_) => f.write_str("0"),
            Term::Atom { name, .. } => f.write_str(name),
            Term::Nonce { name, session, .. } => write!(f, "{name}#{session}"),
            Term::Var { name, .. } => write!(f, "?{name}"),
            Term::Hash { func, arg, .. } => write!(f, "{func}({arg})"),
            Term::Concat(a, b) => write!(f, "({a} . {b})"),
            Term::Left(x) => write!(f, "left({x})"),
            Term::Right(x) => write!(f, "right({x})"),
            Term::Xor(ts) => {
                f.write_str("xor(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a() -> Term {
        atom("a", 2)
    }
    fn b() -> Term {
        atom("b", 2)
    }
    fn c() -> Term {
        atom("c", 2)
    }

    #[test]
    fn self_inverse() {
        assert_eq!(xor([a(), a()]), Term::Zero(2));
    }

    #[test]
    fn cancellation() {
        assert_eq!(xor([a(), b(), a(), c()]), xor([b(), c()]));
        assert_eq!(xor([a(), b(), a(), c()]), Term::Xor(vec![b(), c()]));
    }

    #[test]
    fn zero_is_neutral() {
        assert_eq!(xor([a(), Term::Zero(2)]), a());
    }

    #[test]
    fn projections_of_equal_halves() {
        let x = atom("x", 1);
        let y = atom("y", 1);
        assert_eq!(left(concat(x.clone(), y.clone())), x);
        assert_eq!(right(concat(x.clone(), y.clone())), y);
        // Unequal halves stay symbolic.
        let z = atom("z", 3);
        assert!(matches!(left(concat(x, z)), Term::Left(_)));
    }

    #[test]
    fn halves_rejoin() {
        let h = hash("h", 2, a());
        assert_eq!(concat(left(h.clone()), right(h.clone())), h);
    }

    #[test]
    fn width_checks() {
        assert!(Term::Xor(vec![a(), atom("x", 1)]).well_formed().is_err());
        assert!(Term::Left(Box::new(atom("x", 3))).well_formed().is_err());
        assert_eq!(left(hash("h", 2, a())).width(), 1);
        assert_eq!(concat(a(), atom("x", 1)).width(), 3);
    }

    #[test]
    fn display() {
        let t = xor([hash("h", 2, concat(a(), nonce("N", 1, 2))), b()]);
        assert_eq!(t.to_string(), "xor(b, h((a . N#1)))");
    }

    fn leaf() -> impl Strategy<Value = Term> {
        prop_oneof![
            (0u8..4).prop_map(|i| atom(format!("a{i}"), 2)),
            (0u8..3, 1u32..3).prop_map(|(i, s)| nonce(format!("n{i}"), s, 2)),
            Just(Term::Zero(2)),
        ]
    }

    /// Random raw (unnormalized) terms of width 2.
    fn raw_term() -> impl Strategy<Value = Term> {
        leaf().prop_recursive(4, 40, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..5).prop_map(Term::Xor),
                inner.clone().prop_map(|t| Term::Hash {
                    func: "h".into(),
                    width: 2,
                    arg: Box::new(t)
                }),
                (inner.clone(), inner.clone()).prop_map(|(x, y)| Term::Hash {
                    func: "h".into(),
                    width: 2,
                    arg: Box::new(Term::Concat(Box::new(x), Box::new(y)))
                }),
                (inner.clone(), inner.clone()).prop_map(|(x, y)| Term::Concat(
                    Box::new(Term::Left(Box::new(x))),
                    Box::new(Term::Right(Box::new(y)))
                )),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn normalize_is_idempotent(t in raw_term()) {
            let n = normalize(&t);
            prop_assert_eq!(normalize(&n), n.clone());
            prop_assert_eq!(n.width(), 2);
        }
    }

    proptest! {
        #[test]
        fn xor_group_laws(x in raw_term(), y in raw_term(), z in raw_term()) {
            prop_assert_eq!(xor([x.clone(), y.clone()]), xor([y.clone(), x.clone()]));
            prop_assert_eq!(
                xor([xor([x.clone(), y.clone()]), z.clone()]),
                xor([x.clone(), xor([y.clone(), z.clone()])])
            );
            prop_assert_eq!(xor([x.clone(), y.clone(), y]), normalize(&x));
        }
    }
}
