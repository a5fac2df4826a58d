//! Needleman-Wunsch global alignment.

/// Linear-gap scoring scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scoring {
    pub matched: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for Scoring {
    /// +1 match, -1 mismatch, -1 gap.
    fn default() -> Self {
        Self {
            matched: 1,
            mismatch: -1,
            gap: -1,
        }
    }
}

/// One column of an alignment; `None` is a gap.
pub type Column<T> = (Option<T>, Option<T>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment<T> {
    pub pairs: Vec<Column<T>>,
    pub score: i64,
}

impl<T: PartialEq> Alignment<T> {
    /// Columns where both sides hold the same symbol.
    pub fn matches(&self) -> usize {
        self.pairs.iter().filter(|(a, b)| a.is_some() && a == b).count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Optimal global alignment of `a` against `b`.
///
/// Traceback prefers the diagonal, then up (consume `a`, gap in `b`), then
/// left (gap in `a`, consume `b`).
pub fn needleman_wunsch<T: PartialEq + Clone>(a: &[T], b: &[T], scoring: Scoring) -> Alignment<T> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut table = vec![0i64; (n + 1) * w];
    for i in 1..=n {
        table[i * w] = table[(i - 1) * w] + scoring.gap;
    }
    for j in 1..=m {
        table[j] = table[j - 1] + scoring.gap;
    }
    let sub = |i: usize, j: usize| {
        if a[i - 1] == b[j - 1] {
            scoring.matched
        } else {
            scoring.mismatch
        }
    };
    for i in 1..=n {
        for j in 1..=m {
            let diag = table[(i - 1) * w + j - 1] + sub(i, j);
            let up = table[(i - 1) * w + j] + scoring.gap;
            let left = table[i * w + j - 1] + scoring.gap;
            table[i * w + j] = diag.max(up).max(left);
        }
    }

    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * w + j];
        if i > 0 && j > 0 && here == table[(i - 1) * w + j - 1] + sub(i, j) {
            pairs.push((Some(a[i - 1].clone()), Some(b[j - 1].clone())));
            i -= 1;
            j -= 1;
        } else if i > 0 && here == table[(i - 1) * w + j] + scoring.gap {
            pairs.push((Some(a[i - 1].clone()), None));
            i -= 1;
        } else {
            pairs.push((None, Some(b[j - 1].clone())));
            j -= 1;
        }
    }
    pairs.reverse();
    Alignment {
        pairs,
        score: table[n * w + m],
    }
}
