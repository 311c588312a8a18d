"""Counterfactual data generation and fairness auditing for Dutch hate-speech classifiers."""

from .corpus import LABELS, Post, corpus_stats, filter_corpus, preprocess, shannon_entropy
from .errors import CompletenessError, ParseError, TransportError, ValidationError
from .evalset import EvalSentence, Template, build_evalset, load_templates
from .generate import (
    Counterfactual,
    SubstitutionRecord,
    build_llmdef_prompt,
    build_llmlist_prompt,
    mgs_generate,
    parse_llm_response,
    sll_generate,
)
from .lexicon import (
    CATEGORIES,
    Lexicon,
    SgtMatch,
    SocialGroupTerm,
    SubstitutionDictionary,
    build_dictionary,
    find_sgts,
    load_lexicon,
)
from .metrics import (
    FairnessReport,
    build_fairness_report,
    classification_report,
    ctf,
    ctf_by_category,
    dpd,
    eod,
)
from .predictions import Prediction, binarize, fetch_predictions
from .scorer import NgramModel, SentenceScore, ngram_train, score

__version__ = "0.1.0"
