//! The 19 transformation tags and their train/test split classes.

use serde::{Deserialize, Serialize};

/// Which split a transformation tag may appear in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformClass {
    /// Trained on.
    Seen,
    /// Unseen successive composition of trained transformations.
    Compositional,
    /// Never trained in any form.
    Novel,
}

/// A transformation tag. Compound names denote successive application,
/// e.g. `RmRedSucc` removes the redundant letter and then applies the
/// successor rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    Extend,
    Successor,
    Predecessor,
    RemoveRedundant,
    Fix,
    Sort,
    SortGroup,
    RmRedInterleave,
    RmRedSucc,
    FixExt,
    RmRedSort,
    ExtPred,
    FixInterleave,
    ExtGroup,
    ExtExtSucc,
    FixPredSucc,
    Reverse,
    Shift,
    Replicate,
}

impl Transformation {
    pub const SEEN: [Transformation; 10] = [
        Transformation::Extend,
        Transformation::Successor,
        Transformation::Predecessor,
        Transformation::RemoveRedundant,
        Transformation::Fix,
        Transformation::Sort,
        Transformation::SortGroup,
        Transformation::RmRedInterleave,
        Transformation::RmRedSucc,
        Transformation::FixExt,
    ];

    pub const COMPOSITIONAL: [Transformation; 6] = [
        Transformation::RmRedSort,
        Transformation::ExtPred,
        Transformation::FixInterleave,
        Transformation::ExtGroup,
        Transformation::ExtExtSucc,
        Transformation::FixPredSucc,
    ];

    pub const NOVEL: [Transformation; 3] =
        [Transformation::Reverse, Transformation::Shift, Transformation::Replicate];

    pub const ALL: [Transformation; 19] = [
        Transformation::Extend,
        Transformation::Successor,
        Transformation::Predecessor,
        Transformation::RemoveRedundant,
        Transformation::Fix,
        Transformation::Sort,
        Transformation::SortGroup,
        Transformation::RmRedInterleave,
        Transformation::RmRedSucc,
        Transformation::FixExt,
        Transformation::RmRedSort,
        Transformation::ExtPred,
        Transformation::FixInterleave,
        Transformation::ExtGroup,
        Transformation::ExtExtSucc,
        Transformation::FixPredSucc,
        Transformation::Reverse,
        Transformation::Shift,
        Transformation::Replicate,
    ];

    pub fn class(self) -> TransformClass {
        if Self::SEEN.contains(&self) {
            TransformClass::Seen
        } else if Self::COMPOSITIONAL.contains(&self) {
            TransformClass::Compositional
        } else {
            TransformClass::Novel
        }
    }

    /// Serde tag name, used in dataset records and report tables.
    pub fn name(self) -> &'static str {
        match self {
            Transformation::Extend => "extend",
            Transformation::Successor => "successor",
            Transformation::Predecessor => "predecessor",
            Transformation::RemoveRedundant => "remove_redundant",
            Transformation::Fix => "fix",
            Transformation::Sort => "sort",
            Transformation::SortGroup => "sort_group",
            Transformation::RmRedInterleave => "rm_red_interleave",
            Transformation::RmRedSucc => "rm_red_succ",
            Transformation::FixExt => "fix_ext",
            Transformation::RmRedSort => "rm_red_sort",
            Transformation::ExtPred => "ext_pred",
            Transformation::FixInterleave => "fix_interleave",
            Transformation::ExtGroup => "ext_group",
            Transformation::ExtExtSucc => "ext_ext_succ",
            Transformation::FixPredSucc => "fix_pred_succ",
            Transformation::Reverse => "reverse",
            Transformation::Shift => "shift",
            Transformation::Replicate => "replicate",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_partition_all_tags() {
        assert_eq!(Transformation::ALL.len(), 19);
        let mut seen = 0;
        let mut comp = 0;
        let mut novel = 0;
        for t in Transformation::ALL {
            match t.class() {
                TransformClass::Seen => seen += 1,
                TransformClass::Compositional => comp += 1,
                TransformClass::Novel => novel += 1,
            }
        }
        assert_eq!((seen, comp, novel), (10, 6, 3));
    }

    #[test]
    fn serde_names_match() {
        for t in Transformation::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.name()));
            let back: Transformation = serde_json::from_str(&json).unwrap();
            assert_eq!(back, t);
        }
    }
}
