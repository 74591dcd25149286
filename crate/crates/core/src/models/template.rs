use super::sequence::{Role, Sequence, BOS, EOS, SEP};
use crate::error::{Result, UpoError};

/// Renders `[BOS] x [SEP] y_w [SEP] y_l [EOS]`.
///
/// Components must not contain the structure tokens, which keeps the layout
/// invertible by [`parse_template`].
pub fn render_template(x: &Sequence, y_w: &Sequence, y_l: &Sequence, limit: usize) -> Result<Sequence> {
    for (name, part) in [("prompt", x), ("chosen", y_w), ("rejected", y_l)] {
        if !part.is_plain() {
            return Err(UpoError::invalid(format!("{name} contains a reserved template token")));
        }
    }
    let len = x.len() + y_w.len() + y_l.len() + 4;
    if len > limit {
        return Err(UpoError::LengthOverflow { len, limit });
    }
    let mut tokens = Vec::with_capacity(len);
    tokens.push(BOS);
    tokens.extend_from_slice(&x.tokens);
    tokens.push(SEP);
    tokens.extend_from_slice(&y_w.tokens);
    tokens.push(SEP);
    tokens.extend_from_slice(&y_l.tokens);
    tokens.push(EOS);
    Ok(Sequence {
        tokens,
        role: Role::Template,
    })
}

/// Splits a rendered template back into `(x, y_w, y_l)`.
pub fn parse_template(t: &Sequence) -> Result<(Sequence, Sequence, Sequence)> {
    let toks = &t.tokens;
    let bad = || UpoError::invalid("sequence is not a rendered template");
    if toks.len() < 4 || toks[0] != BOS || *toks.last().unwrap() != EOS {
        return Err(bad());
    }
    let inner = &toks[1..toks.len() - 1];
    let parts: Vec<&[u32]> = inner.split(|&t| t == SEP).collect();
    if parts.len() != 3 || parts.iter().any(|p| p.iter().any(|&t| t == BOS || t == EOS)) {
        return Err(bad());
    }
    Ok((
        Sequence::prompt(parts[0].to_vec()),
        Sequence::response(parts[1].to_vec()),
        Sequence::response(parts[2].to_vec()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs() -> (Sequence, Sequence, Sequence) {
        (
            Sequence::prompt(vec![4, 5]),
            Sequence::response(vec![6, 7, 3]),
            Sequence::response(vec![8, 3]),
        )
    }

    #[test]
    fn order_sensitive() {
        let (x, a, b) = seqs();
        let ab = render_template(&x, &a, &b, 64).unwrap();
        let ba = render_template(&x, &b, &a, 64).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn round_trip() {
        let (x, a, b) = seqs();
        let t = render_template(&x, &a, &b, 64).unwrap();
        assert_eq!(parse_template(&t).unwrap(), (x, a, b));
    }

    #[test]
    fn empty_rejected_component() {
        let (x, a, _) = seqs();
        let t = render_template(&x, &a, &Sequence::response(vec![]), 64).unwrap();
        assert_eq!(t.tokens, vec![BOS, 4, 5, SEP, 6, 7, 3, SEP, EOS]);
    }

    #[test]
    fn overflow_and_reserved_tokens() {
        let (x, a, b) = seqs();
        assert!(matches!(
            render_template(&x, &a, &b, 10),
            Err(UpoError::LengthOverflow { len: 11, limit: 10 })
        ));
        let bad = Sequence::response(vec![6, SEP]);
        assert!(render_template(&x, &bad, &b, 64).is_err());
    }
}
