use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DocChunk, KbError};
use crate::gateway::{CompletionProvider, ModelRequest};
use crate::prompt::{AssembledPrompt, PromptPart};

/// Paraphrases requested per language by default.
pub const DEFAULT_VARIANTS_PER_LANGUAGE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkVariant {
    pub variant_id: u64,
    pub chunk_id: u64,
    pub language: String,
    pub text: String,
    pub is_original: bool,
}

fn language_name(code: &str) -> String {
    let name = match code {
        "en" => "English",
        "zh" => "Chinese",
        "ja" => "Japanese",
        "ko" => "Korean",
        "es" => "Spanish",
        "fr" => "French",
        "de" => "German",
        _ => return format!("the language with code {code}"),
    };
    format!("{name} ({code})")
}

pub(crate) fn text_request(text: String) -> ModelRequest {
    ModelRequest {
        request_id: 0,
        prompt: AssembledPrompt {
            system: String::new(),
            user_parts: vec![PromptPart::Text(text)],
            template_id: None,
            token_estimate: 0,
        },
        max_output_tokens: 1024,
    }
}

/// Fills the paraphrase prompt for one chunk and language.
pub fn paraphrase_prompt(template: &str, chunk: &DocChunk, language: &str, count: usize) -> String {
    template
        .replace("{{count}}", &count.to_string())
        .replace("{{language}}", &language_name(language))
        .replace("{{software}}", &chunk.software)
        .replace("{{section}}", &chunk.section_path.join(" > "))
        .replace("{{content}}", &chunk.content)
}

/// Non-empty reply lines with list numbering or bullets removed.
pub fn parse_paraphrases(reply: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s*").expect("static regex"));
    reply
        .lines()
        .map(|l| re.replace(l, "").trim().to_owned())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Asks `provider` for `count` paraphrases of `chunk` in each language.
///
/// Returns the paraphrase texts grouped by language in request order. Any
/// provider failure or a wrong line count fails the whole chunk; the caller
/// then indexes the original only.
pub fn generate_paraphrases(
    template: &str,
    chunk: &DocChunk,
    languages: &[String],
    count: usize,
    provider: &dyn CompletionProvider,
) -> Result<Vec<(String, Vec<String>)>, KbError> {
    let mut out = Vec::with_capacity(languages.len());
    if count == 0 {
        return Ok(languages.iter().map(|l| (l.clone(), Vec::new())).collect());
    }
    for lang in languages {
        let reply = provider
            .complete(&text_request(paraphrase_prompt(template, chunk, lang, count)))
            .map_err(|e| KbError::Provider(e.to_string()))?;
        let lines = parse_paraphrases(&reply.text);
        if lines.len() != count {
            return Err(KbError::VariantCountMismatch {
                chunk_id: chunk.chunk_id,
                language: lang.clone(),
                expected: count,
                got: lines.len(),
            });
        }
        out.push((lang.clone(), lines));
    }
    Ok(out)
}

/// The original variant followed by the paraphrases, with consecutive
/// variant ids from `first_id`.
pub fn assemble_variants(chunk: &DocChunk, paraphrases: &[(String, Vec<String>)], first_id: u64) -> Vec<ChunkVariant> {
    let mut id = first_id;
    let mut next = || {
        id += 1;
        id - 1
    };
    let mut out = vec![ChunkVariant {
        variant_id: next(),
        chunk_id: chunk.chunk_id,
        language: chunk.language.clone(),
        text: chunk.original_text(),
        is_original: true,
    }];
    for (lang, lines) in paraphrases {
        for line in lines {
            out.push(ChunkVariant {
                variant_id: next(),
                chunk_id: chunk.chunk_id,
                language: lang.clone(),
                text: line.clone(),
                is_original: false,
            });
        }
    }
    out
}

/// [`generate_paraphrases`] plus [`assemble_variants`]. On error the
/// original-only list is returned alongside the error.
pub fn generate_variants(
    template: &str,
    chunk: &DocChunk,
    languages: &[String],
    count: usize,
    provider: &dyn CompletionProvider,
    first_id: u64,
) -> (Vec<ChunkVariant>, Option<KbError>) {
    match generate_paraphrases(template, chunk, languages, count, provider) {
        Ok(p) => (assemble_variants(chunk, &p, first_id), None),
        Err(e) => (assemble_variants(chunk, &[], first_id), Some(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Matcher, MockProvider, MockRule, MockScript};
    use crate::prompt::PromptLibrary;

    fn chunk() -> DocChunk {
        DocChunk {
            chunk_id: 3,
            software: "Microsoft Word".into(),
            section_path: vec!["Insert".into(), "Page Number".into()],
            content: "Press Alt+N, N, U.".into(),
            language: "en".into(),
        }
    }

    fn mock(lines_en: usize, lines_zh: usize) -> MockProvider {
        let lines = |n: usize, tag: &str| (1..=n).map(|i| format!("{i}. {tag} paraphrase {i}")).collect::<Vec<_>>().join("\n");
        MockProvider::new(MockScript {
            rules: vec![
                MockRule {
                    matcher: Matcher::One("English (en)".into()),
                    ..MockRule::fallback(lines(lines_en, "en"))
                },
                MockRule {
                    matcher: Matcher::One("Chinese (zh)".into()),
                    ..MockRule::fallback(lines(lines_zh, "zh"))
                },
            ],
            ..Default::default()
        })
    }

    fn langs(l: &[&str]) -> Vec<String> {
        l.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_language_gives_six() {
        let lib = PromptLibrary::builtin();
        let (v, err) = generate_variants(lib.paraphrase_template(), &chunk(), &langs(&["en"]), 5, &mock(5, 5), 10);
        assert!(err.is_none());
        assert_eq!(v.len(), 6);
        assert!(v[0].is_original);
        assert_eq!(v.iter().filter(|x| x.is_original).count(), 1);
        assert!(v.iter().all(|x| x.chunk_id == 3));
        assert_eq!(v.iter().map(|x| x.variant_id).collect::<Vec<_>>(), (10..16).collect::<Vec<_>>());
        assert_eq!(v[1].text, "en paraphrase 1");
    }

    #[test]
    fn two_languages_give_eleven() {
        let lib = PromptLibrary::builtin();
        let (v, _) = generate_variants(lib.paraphrase_template(), &chunk(), &langs(&["en", "zh"]), 5, &mock(5, 5), 0);
        assert_eq!(v.len(), 11);
        assert_eq!(v.iter().filter(|x| x.language == "zh").count(), 5);
    }

    #[test]
    fn short_reply_degrades_to_original() {
        let lib = PromptLibrary::builtin();
        let (v, err) = generate_variants(lib.paraphrase_template(), &chunk(), &langs(&["en"]), 5, &mock(3, 5), 0);
        assert_eq!(v.len(), 1);
        assert!(matches!(err, Some(KbError::VariantCountMismatch { got: 3, .. })));
    }

    #[test]
    fn numbering_is_stripped() {
        assert_eq!(parse_paraphrases("1) a\n\n- b\n3. c\n  d  "), ["a", "b", "c", "d"]);
    }
}
