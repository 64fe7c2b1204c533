//! Answer grammar. A response is a list of claims joined by `and`, ending at
//! `<eos>`. Every claim form starts with a token class no other form starts
//! with, so segmentation and parsing are unambiguous.
//!
//! ```text
//! claim := exists CAT | none CAT
//!        | NUM [COLOR] CAT
//!        | (COLOR | MATERIAL | SIZE) CAT
//!        | CAT REL CAT
//!        | reads (GLYPH | ?)+
//!        | unsure
//!        | no_such_thing
//! ```

use serde::{Deserialize, Serialize};

use super::vocab::{self, classify, special, Category, Color, Material, Relation, Size, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrValue {
    Color(Color),
    Material(Material),
    Size(Size),
}

impl AttrValue {
    pub fn token(self) -> Token {
        match self {
            AttrValue::Color(c) => vocab::color(c),
            AttrValue::Material(m) => vocab::material(m),
            AttrValue::Size(s) => vocab::size(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Claim {
    Exists(Category),
    Absent(Category),
    Count { n: u8, color: Option<Color>, category: Category },
    Attr { value: AttrValue, category: Category },
    Rel { subject: Category, relation: Relation, anchor: Category },
    /// `None` marks a glyph the reader declares illegible.
    Read(Vec<Option<u8>>),
    Unsure,
    RejectPremise,
}

impl Claim {
    pub fn tokens(&self) -> Vec<Token> {
        match self {
            Claim::Exists(c) => vec![special::EXIST, vocab::category(*c)],
            Claim::Absent(c) => vec![special::NONE, vocab::category(*c)],
            Claim::Count { n, color, category } => {
                let mut t = vec![vocab::number(*n as usize)];
                if let Some(c) = color {
                    t.push(vocab::color(*c));
                }
                t.push(vocab::category(*category));
                t
            }
            Claim::Attr { value, category } => vec![value.token(), vocab::category(*category)],
            Claim::Rel { subject, relation, anchor } => {
                vec![vocab::category(*subject), vocab::relation(*relation), vocab::category(*anchor)]
            }
            Claim::Read(glyphs) => {
                let mut t = vec![special::READ];
                t.extend(glyphs.iter().map(|g| g.map_or(special::ILLEGIBLE, vocab::glyph)));
                t
            }
            Claim::Unsure => vec![special::UNSURE],
            Claim::RejectPremise => vec![special::REJECT],
        }
    }

    pub fn parse(seg: &[Token]) -> Option<Claim> {
        use TokenKind as K;
        let kinds: Vec<TokenKind> = seg.iter().map(|&t| classify(t)).collect();
        let claim = match kinds.as_slice() {
            [K::Special(s), K::Category(c)] if *s == special::EXIST => Claim::Exists(*c),
            [K::Special(s), K::Category(c)] if *s == special::NONE => Claim::Absent(*c),
            [K::Number(n), K::Category(c)] => Claim::Count { n: *n, color: None, category: *c },
            [K::Number(n), K::Color(col), K::Category(c)] => Claim::Count { n: *n, color: Some(*col), category: *c },
            [K::Color(v), K::Category(c)] => Claim::Attr { value: AttrValue::Color(*v), category: *c },
            [K::Material(v), K::Category(c)] => Claim::Attr { value: AttrValue::Material(*v), category: *c },
            [K::Size(v), K::Category(c)] => Claim::Attr { value: AttrValue::Size(*v), category: *c },
            [K::Category(a), K::Relation(r), K::Category(b)] => Claim::Rel { subject: *a, relation: *r, anchor: *b },
            [K::Special(s), rest @ ..] if *s == special::READ && !rest.is_empty() => {
                let mut glyphs = Vec::with_capacity(rest.len());
                for k in rest {
                    match k {
                        K::Glyph(g) => glyphs.push(Some(*g)),
                        K::Special(t) if *t == special::ILLEGIBLE => glyphs.push(None),
                        _ => return None,
                    }
                }
                Claim::Read(glyphs)
            }
            [K::Special(s)] if *s == special::UNSURE => Claim::Unsure,
            [K::Special(s)] if *s == special::REJECT => Claim::RejectPremise,
            _ => return None,
        };
        Some(claim)
    }
}

/// One segment of a parsed response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Claim(Claim),
    Unparseable(Vec<Token>),
}

/// Splits a response at `and` up to the first `<eos>` and parses each span.
pub fn parse_response(tokens: &[Token]) -> Vec<Parsed> {
    let end = tokens.iter().position(|&t| t == special::EOS).unwrap_or(tokens.len());
    let body = &tokens[..end];
    if body.is_empty() {
        return Vec::new();
    }
    body.split(|&t| t == special::AND)
        .map(|seg| match Claim::parse(seg) {
            Some(c) => Parsed::Claim(c),
            None => Parsed::Unparseable(seg.to_vec()),
        })
        .collect()
}

/// Joins claims into a terminated response.
pub fn join_claims<'a>(claims: impl IntoIterator<Item = &'a Claim>) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, c) in claims.into_iter().enumerate() {
        if i > 0 {
            out.push(special::AND);
        }
        out.extend(c.tokens());
    }
    out.push(special::EOS);
    out
}
