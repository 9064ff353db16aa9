use super::vocab::{CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};

/// Sliding windows over tokenized documents.
///
/// Windows start at `0, stride, 2*stride, ...`, stop once one reaches the
/// end of the document, and are capped at `max_per_doc` per document. Each
/// output is `[CLS] content [SEP]` padded to `window + 2`. Empty documents
/// yield nothing.
pub fn window_corpus(documents: &[Vec<u32>], window: usize, stride: usize, max_per_doc: usize) -> Result<Vec<Vec<u32>>> {
    if !(window > stride && stride > 0) {
        return Err(Error::config(format!("need window > stride > 0, got window {window}, stride {stride}")));
    }
    if max_per_doc == 0 {
        return Err(Error::config("max_per_doc must be positive"));
    }
    let mut out = Vec::new();
    for doc in documents {
        let mut start = 0;
        let mut taken = 0;
        while start < doc.len() && taken < max_per_doc {
            let end = (start + window).min(doc.len());
            let mut seq = Vec::with_capacity(window + 2);
            seq.push(CLS_ID);
            seq.extend_from_slice(&doc[start..end]);
            seq.push(SEP_ID);
            seq.resize(window + 2, PAD_ID);
            out.push(seq);
            taken += 1;
            if end == doc.len() {
                break;
            }
            start += stride;
        }
    }
    Ok(out)
}
