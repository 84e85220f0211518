use serde::{Deserialize, Serialize};

pub type TokenId = usize;

pub const MASK_GROUPS: usize = 2;
pub const MASK_PER_GROUP: usize = 3;
pub const MASK_TOKENS: usize = MASK_GROUPS * MASK_PER_GROUP;

/// Fixed symbol set: specials, task instructions, reasoning markers,
/// `num_count` number tokens and the mask-token block.
///
/// Layout: `EOS=0, BOS, ANS, TIME, QUAD, TASK_TEMPORAL, TASK_SPATIAL,
/// TASK_REASONING, TASK_SEGMENT, NUM_0.., MASK_0..MASK_5`. EOS is id 0 so a
/// decoder with flat logits stops immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub num_count: usize,
}

impl Vocabulary {
    pub const EOS: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const ANS: TokenId = 2;
    pub const TIME: TokenId = 3;
    pub const QUAD: TokenId = 4;
    pub const TASK_TEMPORAL: TokenId = 5;
    pub const TASK_SPATIAL: TokenId = 6;
    pub const TASK_REASONING: TokenId = 7;
    pub const TASK_SEGMENT: TokenId = 8;
    const NUM_BASE: TokenId = 9;

    pub fn new(num_count: usize) -> Self {
        Self { num_count }
    }

    pub fn size(&self) -> usize {
        Self::NUM_BASE + self.num_count + MASK_TOKENS
    }

    pub fn num(&self, k: usize) -> Option<TokenId> {
        (k < self.num_count).then_some(Self::NUM_BASE + k)
    }

    pub fn as_num(&self, id: TokenId) -> Option<usize> {
        (Self::NUM_BASE..Self::NUM_BASE + self.num_count)
            .contains(&id)
            .then(|| id - Self::NUM_BASE)
    }

    fn mask_base(&self) -> TokenId {
        Self::NUM_BASE + self.num_count
    }

    pub fn mask(&self, group: usize, slot: usize) -> TokenId {
        assert!(group < MASK_GROUPS && slot < MASK_PER_GROUP);
        self.mask_base() + group * MASK_PER_GROUP + slot
    }

    /// All mask ids in group-major order.
    pub fn mask_ids(&self) -> Vec<TokenId> {
        (0..MASK_TOKENS).map(|i| self.mask_base() + i).collect()
    }

    /// `(group, slot)` of a mask token.
    pub fn mask_slot(&self, id: TokenId) -> Option<(usize, usize)> {
        let base = self.mask_base();
        (base..base + MASK_TOKENS)
            .contains(&id)
            .then(|| ((id - base) / MASK_PER_GROUP, (id - base) % MASK_PER_GROUP))
    }

    pub fn name(&self, id: TokenId) -> String {
        match id {
            Self::EOS => "<eos>".into(),
            Self::BOS => "<bos>".into(),
            Self::ANS => "<ans>".into(),
            Self::TIME => "<time>".into(),
            Self::QUAD => "<quad>".into(),
            Self::TASK_TEMPORAL => "<when>".into(),
            Self::TASK_SPATIAL => "<where>".into(),
            Self::TASK_REASONING => "<which>".into(),
            Self::TASK_SEGMENT => "<segment>".into(),
            _ => {
                if let Some(k) = self.as_num(id) {
                    k.to_string()
                } else if let Some((g, s)) = self.mask_slot(id) {
                    format!("<mask{g}.{s}>")
                } else {
                    format!("<unk{id}>")
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_distinct() {
        let v = Vocabulary::new(8);
        assert_eq!(v.size(), 23);
        let masks = v.mask_ids();
        assert_eq!(masks.len(), 6);
        assert!(masks.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(*masks.last().unwrap(), v.size() - 1);
        assert_eq!(v.mask_slot(v.mask(1, 2)), Some((1, 2)));
        assert_eq!(v.mask_slot(v.mask(0, 0)), Some((0, 0)));
        assert_eq!(v.as_num(v.num(7).unwrap()), Some(7));
        assert_eq!(v.num(8), None);
        assert_eq!(v.as_num(Vocabulary::ANS), None);
        assert_eq!(v.mask_slot(v.num(0).unwrap()), None);
    }

    #[test]
    fn names_are_unique() {
        let v = Vocabulary::new(8);
        let names: std::collections::BTreeSet<_> = (0..v.size()).map(|i| v.name(i)).collect();
        assert_eq!(names.len(), v.size());
    }
}
