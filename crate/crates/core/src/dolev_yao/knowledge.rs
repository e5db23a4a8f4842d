use std::collections::{BTreeMap, BTreeSet};

use super::term::{normalize, Term};

/// Terms larger than this many nodes are never added to a knowledge set.
pub const TERM_SIZE_CAP: usize = 64;

/// XOR span over GF(2), kept in reduced row-echelon form.
#[derive(Debug, Clone, Default)]
struct XorSpan {
    columns: BTreeMap<Term, usize>,
    /// `(pivot, row)`; no row contains another row's pivot.
    rows: Vec<(usize, BTreeSet<usize>)>,
}

impl XorSpan {
    fn column(&mut self, t: &Term) -> usize {
        let next = self.columns.len();
        *self.columns.entry(t.clone()).or_insert(next)
    }

    fn reduce(&self, mut v: BTreeSet<usize>) -> BTreeSet<usize> {
        for (p, row) in &self.rows {
            if v.contains(p) {
                v = v.symmetric_difference(row).copied().collect();
            }
        }
        v
    }

    /// Adds a vector; false if it was already in the span.
    fn insert(&mut self, v: BTreeSet<usize>) -> bool {
        let v = self.reduce(v);
        let Some(&p) = v.iter().next() else {
            return false;
        };
        for (_, row) in &mut self.rows {
            if row.contains(&p) {
                *row = row.symmetric_difference(&v).copied().collect();
            }
        }
        self.rows.push((p, v));
        true
    }

    /// Column indices of the summands of `t`, or `None` if some summand has
    /// never been seen.
    fn lookup(&self, summands: &[&Term]) -> Option<BTreeSet<usize>> {
        let mut v = BTreeSet::new();
        for s in summands {
            let c = *self.columns.get(*s)?;
            if !v.insert(c) {
                v.remove(&c);
            }
        }
        Some(v)
    }

    fn contains(&self, summands: &[&Term]) -> bool {
        self.lookup(summands)
            .is_some_and(|v| self.reduce(v).is_empty())
    }
}

/// What the intruder knows: closed under decomposition (pairing
/// projections, rejoining halves) and XOR isolation. Composition is handled
/// on demand by [`KnowledgeSet::derive`].
#[derive(Debug, Clone, Default)]
pub struct KnowledgeSet {
    terms: BTreeSet<Term>,
    span: XorSpan,
    incomplete: bool,
}

impl KnowledgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut k = Self::new();
        k.extend(terms);
        k
    }

    pub fn extend(&mut self, terms: impl IntoIterator<Item = Term>) {
        let work: Vec<Term> = terms.into_iter().map(|t| normalize(&t)).collect();
        self.saturate(work);
    }

    pub fn insert(&mut self, t: Term) {
        self.saturate(vec![normalize(&t)]);
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Set when a term hit the size cap and was dropped.
    pub fn is_incomplete(&self) -> bool {
        self.incomplete
    }

    /// Member of the closed set, or an XOR combination of members.
    pub fn contains(&self, t: &Term) -> bool {
        let t = normalize(t);
        matches!(t, Term::Zero(_)) || self.terms.contains(&t) || self.span.contains(&t.summands())
    }

    pub fn is_subset(&self, other: &KnowledgeSet) -> bool {
        self.terms.iter().all(|t| other.contains(t))
    }

    fn saturate(&mut self, mut work: Vec<Term>) {
        while let Some(t) = work.pop() {
            if matches!(t, Term::Zero(_)) {
                continue;
            }
            if t.size() > TERM_SIZE_CAP {
                self.incomplete = true;
                continue;
            }
            if !self.terms.insert(t.clone()) {
                continue;
            }
            match &t {
                Term::Concat(a, b) => {
                    work.push((**a).clone());
                    work.push((**b).clone());
                }
                Term::Left(x) if self.terms.contains(&Term::Right(x.clone())) => {
                    work.push((**x).clone())
                }
                Term::Right(x) if self.terms.contains(&Term::Left(x.clone())) => {
                    work.push((**x).clone())
                }
                _ => {}
            }
            let v: BTreeSet<usize> = t
                .summands()
                .into_iter()
                .map(|s| self.span.column(s))
                .collect();
            if self.span.insert(v) {
                for (s, &c) in &self.span.columns {
                    if !self.terms.contains(s) && self.span.reduce(BTreeSet::from([c])).is_empty() {
                        work.push(s.clone());
                    }
                }
            }
        }
    }

    /// Adds every compound XOR summand the intruder can build within
    /// `depth` constructor applications, re-saturating until nothing new
    /// appears.
    pub fn close(&self, depth: usize) -> KnowledgeSet {
        let mut k = self.clone();
        loop {
            let candidates: Vec<Term> = k
                .span
                .columns
                .keys()
                .filter(|s| s.is_compound() && !k.terms.contains(*s))
                .cloned()
                .collect();
            let built: Vec<Term> = candidates
                .into_iter()
                .filter(|c| k.derive(c, depth))
                .collect();
            if built.is_empty() {
                return k;
            }
            k.saturate(built);
        }
    }

    /// Whether `t` can be built from this (closed) set with at most `depth`
    /// nested constructor applications. XOR steps are free.
    pub fn derive(&self, t: &Term, depth: usize) -> bool {
        if self.contains(t) {
            return true;
        }
        match t {
            Term::Xor(ts) => {
                let rest: Vec<&Term> = ts
                    .iter()
                    .filter(|s| {
                        !(self.terms.contains(*s) || (s.is_compound() && self.derive(s, depth)))
                    })
                    .collect();
                rest.is_empty() || self.span.contains(&rest)
            }
            _ if depth == 0 => false,
            Term::Concat(a, b) => self.derive(a, depth - 1) && self.derive(b, depth - 1),
            Term::Hash { arg, .. } | Term::Left(arg) | Term::Right(arg) => {
                self.derive(arg, depth - 1)
            }
            _ => false,
        }
    }
}

/// `goal` is derivable from `k` within `depth`.
pub fn derivable(k: &KnowledgeSet, goal: &Term, depth: usize) -> bool {
    k.close(depth).derive(&normalize(goal), depth)
}

#[cfg(test)]
mod tests {
    use super::super::term::{atom, concat, hash, left, nonce, right, xor};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xor_isolation() {
        let (a, b) = (atom("a", 2), atom("b", 2));
        let k = KnowledgeSet::from_terms([a.clone(), xor([a, b.clone()])]).close(1);
        assert!(k.contains(&b));
    }

    #[test]
    fn pair_projection() {
        let (x, y) = (atom("x", 2), atom("y", 1));
        let k = KnowledgeSet::from_terms([concat(x.clone(), y.clone())]).close(1);
        assert!(k.contains(&x) && k.contains(&y));
    }

    #[test]
    fn hash_is_one_way() {
        let id = atom("id", 2);
        let k = KnowledgeSet::from_terms([hash("h", 2, id.clone())]);
        for d in 0..10 {
            assert!(!derivable(&k, &id, d));
        }
    }

    #[test]
    fn known_term_at_depth_zero() {
        let t = hash("h", 2, atom("a", 2));
        assert!(derivable(&KnowledgeSet::from_terms([t.clone()]), &t, 0));
    }

    #[test]
    fn halves_give_the_whole() {
        let h = hash("h", 2, atom("s", 2));
        let k = KnowledgeSet::from_terms([left(h.clone()), right(h.clone())]);
        assert!(k.contains(&h));
    }

    fn session_terms() -> (Vec<Term>, Term, Term, Term, Term) {
        let id = atom("ID", 2);
        let gb = atom("GB", 2);
        let nr = nonce("Nr", 1, 2);
        let nt = nonce("Nt", 1, 2);
        let core = hash("h", 2, concat(xor([id.clone(), nt.clone()]), nr.clone()));
        let m = xor([
            hash("h", 2, concat(concat(id.clone(), nt.clone()), nr.clone())),
            gb.clone(),
            nt.clone(),
        ]);
        (
            vec![nr, nt.clone(), left(core.clone()), right(core), m],
            id,
            gb,
            nt,
            atom("other", 2),
        )
    }

    #[test]
    fn session_keeps_id_and_gb_secret() {
        let (trace, id, gb, _, _) = session_terms();
        let k = KnowledgeSet::from_terms(trace);
        assert!(!derivable(&k, &id, 6));
        assert!(!derivable(&k, &gb, 6));
        assert!(!k.close(6).is_incomplete());
    }

    #[test]
    fn gb_falls_with_id() {
        let (mut trace, id, gb, _, _) = session_terms();
        trace.push(id);
        let k = KnowledgeSet::from_terms(trace);
        assert!(derivable(&k, &gb, 3));
        assert!(!derivable(&k, &gb, 2));
    }

    #[test]
    fn xor_goal_with_buildable_summand() {
        let (a, b) = (atom("a", 2), atom("b", 2));
        let goal = xor([hash("h", 2, a.clone()), b.clone()]);
        let k = KnowledgeSet::from_terms([a, b]);
        assert!(derivable(&k, &goal, 1));
        assert!(!derivable(&k, &goal, 0));
    }

    fn leaf() -> impl Strategy<Value = Term> {
        prop_oneof![
            (0u8..4).prop_map(|i| atom(format!("a{i}"), 2)),
            (0u8..3).prop_map(|i| nonce(format!("n{i}"), 1, 2)),
        ]
    }

    fn term() -> impl Strategy<Value = Term> {
        leaf().prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(xor),
                inner.clone().prop_map(|t| hash("h", 2, t)),
                (inner.clone(), inner.clone()).prop_map(|(x, y)| concat(x, y)),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn close_is_monotone(
            base in prop::collection::vec(term(), 0..5),
            more in prop::collection::vec(term(), 0..4),
            depth in 0usize..4,
        ) {
            let small = KnowledgeSet::from_terms(base.clone()).close(depth);
            let big = KnowledgeSet::from_terms(base.into_iter().chain(more)).close(depth);
            prop_assert!(small.is_subset(&big));
        }
    }
}
