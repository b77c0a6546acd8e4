use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} label {value:?}")]
pub struct UnknownLabel {
    pub kind: &'static str,
    pub value: String,
}

/// Closed label vocabulary with stable integer codes.
pub trait Label: Copy + Eq + fmt::Debug + 'static {
    const KIND: &'static str;
    const ALL: &'static [Self];

    fn name(self) -> &'static str;

    fn code(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("label listed in ALL")
    }

    fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    fn count() -> usize {
        Self::ALL.len()
    }

    /// Case-insensitive match after trimming.
    fn parse_label(s: &str) -> Result<Self, UnknownLabel> {
        let needle = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(needle))
            .ok_or_else(|| UnknownLabel {
                kind: Self::KIND,
                value: s.to_string(),
            })
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl Label for $name {
            const KIND: &'static str = $kind;
            const ALL: &'static [Self] = &[$(Self::$variant),+];

            fn name(self) -> &'static str {
                match self {
                    $(Self::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse_label(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.name())
            }
        }
    };
}

label_enum!(
    /// Polarity label, codes 0/1/2.
    SentimentLabel, "sentiment", {
        Positive => "positive",
        Negative => "negative",
        Neutral => "neutral",
    }
);

label_enum!(
    /// The twenty communicative intents, coded 0..19 in table order.
    IntentLabel, "intent", {
        Comfort => "Comfort",
        Oppose => "Oppose",
        Greet => "Greet",
        Complain => "Complain",
        AskForHelp => "Ask for help",
        Taunt => "Taunt",
        Apologize => "Apologize",
        Introduce => "Introduce",
        Guess => "Guess",
        Advise => "Advise",
        Compromise => "Compromise",
        Praise => "Praise",
        Inform => "Inform",
        Flaunt => "Flaunt",
        Criticize => "Criticize",
        Thank => "Thank",
        Agree => "Agree",
        Leave => "Leave",
        Query => "Query",
        Joke => "Joke",
    }
);

label_enum!(
    /// Sticker style: people, animal, cartoon, each with or without embedded text, or text only.
    StickerClass, "sticker class", {
        P => "P",
        A => "A",
        C => "C",
        PT => "P-t",
        AT => "A-t",
        CT => "C-t",
        Text => "Text",
    }
);

impl StickerClass {
    /// Whether stickers of this class carry rendered text.
    pub fn has_text(self) -> bool {
        !matches!(self, Self::P | Self::A | Self::C)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_sizes_and_codes() {
        assert_eq!(SentimentLabel::count(), 3);
        assert_eq!(IntentLabel::count(), 20);
        assert_eq!(StickerClass::count(), 7);
        assert_eq!(SentimentLabel::Neutral.code(), 2);
        assert_eq!(IntentLabel::Comfort.code(), 0);
        assert_eq!(IntentLabel::Apologize.code(), 6);
        assert_eq!(IntentLabel::Query.code(), 18);
        assert_eq!(IntentLabel::Joke.code(), 19);
        for (i, l) in IntentLabel::ALL.iter().enumerate() {
            assert_eq!(IntentLabel::from_code(i), Some(*l));
        }
    }

    #[test]
    fn parsing_is_case_insensitive_and_trimmed() {
        assert_eq!(" ask FOR help ".parse::<IntentLabel>(), Ok(IntentLabel::AskForHelp));
        assert_eq!("Negative".parse::<SentimentLabel>(), Ok(SentimentLabel::Negative));
        assert_eq!("c-T".parse::<StickerClass>(), Ok(StickerClass::CT));
    }

    #[test]
    fn removed_intent_is_unknown() {
        let err = "Prevent".parse::<IntentLabel>().unwrap_err();
        assert_eq!(err.value, "Prevent");
        assert!(err.to_string().contains("Prevent"));
    }
}
