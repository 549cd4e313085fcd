use crate::error::{Error, Result};
use crate::lexicon::{BilingualSpaceMap, FOREIGN_ID, SIL_ID};
use crate::locale::Locale;
use crate::model::LID_SIL;
use crate::synthdata::Utterance;

/// Per-frame training targets for every head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTargets {
    /// Bilingual unit ids.
    pub bilingual: Vec<usize>,
    /// Per-locale unit ids, FOREIGN on the other locale's speech.
    pub locale: [Vec<usize>; 2],
    /// 0 = locale A, 1 = locale B, 2 = silence.
    pub lid: Vec<usize>,
}

impl FrameTargets {
    pub fn frames(&self) -> usize {
        self.bilingual.len()
    }

    /// Concatenates target streams in frame order.
    pub fn concat(parts: &[&FrameTargets]) -> FrameTargets {
        let mut out = FrameTargets {
            bilingual: Vec::new(),
            locale: [Vec::new(), Vec::new()],
            lid: Vec::new(),
        };
        for p in parts {
            out.bilingual.extend_from_slice(&p.bilingual);
            out.locale[0].extend_from_slice(&p.locale[0]);
            out.locale[1].extend_from_slice(&p.locale[1]);
            out.lid.extend_from_slice(&p.lid);
        }
        out
    }

    /// Targets for `n` silence frames.
    pub fn silence(n: usize) -> FrameTargets {
        FrameTargets {
            bilingual: vec![SIL_ID; n],
            locale: [vec![SIL_ID; n], vec![SIL_ID; n]],
            lid: vec![LID_SIL; n],
        }
    }
}

/// Derives all target streams from an utterance's alignment and word tags.
pub fn make_frame_targets(utt: &Utterance, map: &BilingualSpaceMap) -> Result<FrameTargets> {
    if utt.features.rows() != utt.alignment.len() {
        return Err(Error::Invalid(format!(
            "utterance {}: alignment has {} frames, features have {}",
            utt.id,
            utt.alignment.len(),
            utt.features.rows()
        )));
    }
    let n = utt.frames();
    let mut frame_locale: Vec<Option<Locale>> = vec![None; n];
    for w in &utt.words {
        if w.end > n || w.start > w.end {
            return Err(Error::Invalid(format!(
                "utterance {}: span {}..{} outside {n} frames",
                utt.id, w.start, w.end
            )));
        }
        frame_locale[w.start..w.end]
            .iter_mut()
            .for_each(|f| *f = Some(w.locale));
    }
    let mut t = FrameTargets::silence(n);
    for (i, &id) in utt.alignment.iter().enumerate() {
        if id >= map.bilingual.len() {
            return Err(Error::Invalid(format!(
                "utterance {}: frame {i} has unit id {id} outside the bilingual inventory",
                utt.id
            )));
        }
        if id == SIL_ID {
            continue;
        }
        let locale = frame_locale[i].ok_or_else(|| {
            Error::Invalid(format!(
                "utterance {}: speech frame {i} is outside every word",
                utt.id
            ))
        })?;
        let own = map.to_locale_id(locale, id);
        if own == FOREIGN_ID {
            return Err(Error::Invalid(format!(
                "utterance {}: frame {i} unit {} is not in locale {locale}",
                utt.id,
                map.bilingual.unit(id).unwrap_or("?")
            )));
        }
        t.bilingual[i] = id;
        t.locale[locale.index()][i] = own;
        t.locale[locale.other().index()][i] = FOREIGN_ID;
        t.lid[i] = locale.index();
    }
    Ok(t)
}
