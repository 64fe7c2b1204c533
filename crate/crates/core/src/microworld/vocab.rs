//! The closed token vocabulary shared by prompts, questions and answers.
//!
//! Ids are laid out in fixed blocks so that a token id fully determines its
//! role. The layout is part of the on-disk format: reordering anything here
//! invalidates every stored dataset and checkpoint.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A single vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u16);

impl Token {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn name(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

closed_enum!(Category {
    Cup => "cup", Book => "book", Car => "car", Dog => "dog", Cat => "cat", Chair => "chair",
    Lamp => "lamp", Ball => "ball", Box => "box", Plant => "plant", Bottle => "bottle", Phone => "phone",
});

closed_enum!(Color {
    Red => "red", Blue => "blue", Green => "green", Yellow => "yellow",
    Black => "black", White => "white", Orange => "orange", Purple => "purple",
});

closed_enum!(Size { Small => "small", Medium => "medium", Large => "large" });

closed_enum!(
    /// `Unknown` is rendered, but tells the viewer nothing: material questions
    /// about such objects are answered by abstaining.
    Material { Wood => "wood", Metal => "metal", Plastic => "plastic", Glass => "glass", Fabric => "fabric", Unknown => "unknown" }
);

closed_enum!(Occlusion { Visible => "visible", Partial => "partial", Hidden => "hidden" });

closed_enum!(Lighting { Bright => "bright", Dim => "dim" });

closed_enum!(Relation { LeftOf => "left_of", RightOf => "right_of", Above => "above", Below => "below" });

closed_enum!(
    /// Properties no scene ever renders.
    UnrenderedProperty { Price => "price", Pages => "pages", Weight => "weight" }
);

impl Relation {
    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    /// Whether `a` stands in this relation to `b` (grid coordinates, row 0 on top).
    pub fn holds(self, a: (u8, u8), b: (u8, u8)) -> bool {
        match self {
            Relation::LeftOf => a.0 < b.0,
            Relation::RightOf => a.0 > b.0,
            Relation::Above => a.1 < b.1,
            Relation::Below => a.1 > b.1,
        }
    }
}

impl Category {
    /// A visually or semantically close category, used for sibling swaps.
    pub fn siblings(self) -> &'static [Category] {
        use Category::*;
        match self {
            Cup => &[Bottle, Box],
            Bottle => &[Cup, Lamp],
            Book => &[Box, Phone],
            Box => &[Book, Chair],
            Car => &[Chair, Ball],
            Dog => &[Cat, Ball],
            Cat => &[Dog, Plant],
            Chair => &[Box, Lamp],
            Lamp => &[Plant, Bottle],
            Ball => &[Cup, Dog],
            Plant => &[Lamp, Cat],
            Phone => &[Book, Cup],
        }
    }
}

/// Number of symbols in the OCR alphabet.
pub const GLYPHS: usize = 16;
/// Largest number token; bounds both counts and grid coordinates.
pub const MAX_NUMBER: usize = 15;

/// Fixed structural tokens.
pub mod special {
    use super::Token;
    pub const PAD: Token = Token(0);
    pub const SEP: Token = Token(1);
    pub const ANS: Token = Token(2);
    pub const EOS: Token = Token(3);
    pub const AND: Token = Token(4);
    pub const BRIGHT: Token = Token(5);
    pub const DIM: Token = Token(6);
    pub const MASK: Token = Token(7);
    pub const PARTIAL: Token = Token(8);
    pub const LABEL: Token = Token(9);
    pub const ILLEGIBLE: Token = Token(10);
    pub const EXIST: Token = Token(11);
    pub const NONE: Token = Token(12);
    pub const READ: Token = Token(13);
    pub const UNSURE: Token = Token(14);
    pub const REJECT: Token = Token(15);
    pub const Q_EXIST: Token = Token(16);
    pub const Q_COUNT: Token = Token(17);
    pub const Q_COLOR: Token = Token(18);
    pub const Q_MATERIAL: Token = Token(19);
    pub const Q_REL: Token = Token(20);
    pub const Q_READ: Token = Token(21);
    /// Followed by the three unrendered-property question tokens.
    pub const Q_PROPERTY_BASE: u16 = 22;
}

const SPECIAL_NAMES: [&str; 25] = [
    "<pad>", "<sep>", "<ans>", "<eos>", "and", "bright", "dim", "<mask>", "partial", "label", "?",
    "exists", "none", "reads", "unsure", "no_such_thing", "q_exist", "q_count", "q_color",
    "q_material", "q_rel", "q_read", "q_price", "q_pages", "q_weight",
];

const CATEGORY_BASE: u16 = 25;
const COLOR_BASE: u16 = CATEGORY_BASE + 12;
const SIZE_BASE: u16 = COLOR_BASE + 8;
const MATERIAL_BASE: u16 = SIZE_BASE + 3;
const RELATION_BASE: u16 = MATERIAL_BASE + 6;
const NUMBER_BASE: u16 = RELATION_BASE + 4;
const GLYPH_BASE: u16 = NUMBER_BASE + MAX_NUMBER as u16 + 1;

/// Number of ids actually used by the microworld.
pub const USED_VOCAB: usize = GLYPH_BASE as usize + GLYPHS;

/// What a token id denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Special(Token),
    Category(Category),
    Color(Color),
    Size(Size),
    Material(Material),
    Relation(Relation),
    Number(u8),
    Glyph(u8),
    Property(UnrenderedProperty),
    Unused,
}

pub fn category(c: Category) -> Token {
    Token(CATEGORY_BASE + c.index() as u16)
}
pub fn color(c: Color) -> Token {
    Token(COLOR_BASE + c.index() as u16)
}
pub fn size(s: Size) -> Token {
    Token(SIZE_BASE + s.index() as u16)
}
pub fn material(m: Material) -> Token {
    Token(MATERIAL_BASE + m.index() as u16)
}
pub fn relation(r: Relation) -> Token {
    Token(RELATION_BASE + r.index() as u16)
}
pub fn property(p: UnrenderedProperty) -> Token {
    Token(special::Q_PROPERTY_BASE + p.index() as u16)
}
pub fn lighting(l: Lighting) -> Token {
    match l {
        Lighting::Bright => special::BRIGHT,
        Lighting::Dim => special::DIM,
    }
}

/// Number token; panics above [`MAX_NUMBER`], which scene bounds rule out.
pub fn number(n: usize) -> Token {
    assert!(n <= MAX_NUMBER, "number {n} outside vocabulary");
    Token(NUMBER_BASE + n as u16)
}

pub fn glyph(g: u8) -> Token {
    assert!((g as usize) < GLYPHS);
    Token(GLYPH_BASE + g as u16)
}

pub fn classify(t: Token) -> TokenKind {
    let id = t.0;
    if id < special::Q_PROPERTY_BASE {
        TokenKind::Special(t)
    } else if id < CATEGORY_BASE {
        TokenKind::Property(UnrenderedProperty::ALL[(id - special::Q_PROPERTY_BASE) as usize])
    } else if id < COLOR_BASE {
        TokenKind::Category(Category::ALL[(id - CATEGORY_BASE) as usize])
    } else if id < SIZE_BASE {
        TokenKind::Color(Color::ALL[(id - COLOR_BASE) as usize])
    } else if id < MATERIAL_BASE {
        TokenKind::Size(Size::ALL[(id - SIZE_BASE) as usize])
    } else if id < RELATION_BASE {
        TokenKind::Material(Material::ALL[(id - MATERIAL_BASE) as usize])
    } else if id < NUMBER_BASE {
        TokenKind::Relation(Relation::ALL[(id - RELATION_BASE) as usize])
    } else if id < GLYPH_BASE {
        TokenKind::Number((id - NUMBER_BASE) as u8)
    } else if (id as usize) < USED_VOCAB {
        TokenKind::Glyph((id - GLYPH_BASE) as u8)
    } else {
        TokenKind::Unused
    }
}

/// Human-readable name of a token.
pub fn token_name(t: Token) -> String {
    match classify(t) {
        TokenKind::Special(s) => SPECIAL_NAMES[s.id()].to_string(),
        TokenKind::Property(p) => SPECIAL_NAMES[p.index() + special::Q_PROPERTY_BASE as usize].to_string(),
        TokenKind::Category(c) => c.name().to_string(),
        TokenKind::Color(c) => c.name().to_string(),
        TokenKind::Size(s) => s.name().to_string(),
        TokenKind::Material(m) => m.name().to_string(),
        TokenKind::Relation(r) => r.name().to_string(),
        TokenKind::Number(n) => n.to_string(),
        TokenKind::Glyph(g) => ((b'A' + g) as char).to_string(),
        TokenKind::Unused => format!("<unused{}>", t.0),
    }
}

/// Space-joined rendering of a token sequence, for logs and tables.
pub fn render(tokens: &[Token]) -> String {
    tokens.iter().map(|&t| token_name(t)).collect::<Vec<_>>().join(" ")
}

/// The id → string manifest written next to token-bearing datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabManifest {
    pub size: usize,
    pub tokens: Vec<String>,
}

impl VocabManifest {
    pub fn new(vocab_size: usize) -> Self {
        let tokens = (0..vocab_size).map(|i| token_name(Token(i as u16))).collect();
        VocabManifest { size: vocab_size, tokens }
    }
}
