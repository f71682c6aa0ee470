/// Common English function words used by the English-title heuristic.
pub(crate) const STOPWORDS: [&str; 200] = [
    "a", "about", "above", "after", "again", "against", "all", "also", "always", "am",
    "an", "and", "any", "anytime", "are", "around", "as", "at", "automatically", "back",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "daily", "did", "do", "does", "doing", "done", "down", "during",
    "each", "else", "even", "ever", "every", "everything", "few", "for", "from", "further",
    "get", "gets", "getting", "give", "go", "goes", "going", "got", "had", "has",
    "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "know", "last", "let", "like", "made", "make", "many", "me", "more", "most",
    "much", "must", "my", "myself", "need", "never", "new", "next", "no", "nor",
    "not", "now", "of", "off", "on", "once", "one", "only", "or", "other",
    "our", "ours", "ourselves", "out", "over", "own", "please", "put", "really", "same",
    "save", "say", "see", "send", "set", "she", "should", "so", "some", "someone",
    "something", "soon", "still", "such", "take", "tell", "than", "that", "the", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "thing", "this", "those",
    "through", "time", "to", "today", "tomorrow", "too", "turn", "under", "until", "up",
    "upon", "us", "use", "very", "want", "was", "way", "we", "week", "were",
    "what", "whatever", "when", "whenever", "where", "whether", "which", "while", "who", "whom",
    "why", "will", "with", "within", "without", "would", "yes", "yet", "you", "your",
    "yours", "yourself", "yourselves", "automatic", "day", "via", "whose", "everyday", "hour", "minute",
];
