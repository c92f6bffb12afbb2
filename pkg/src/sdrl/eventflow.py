"""Template-driven temporal QA generation over (action, t_s, t_e) annotations.

Ground truth is computed only from the annotated times. Every family fills
a core template plus one static paraphrase and emits a record with the
fields of the published dataset entry.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LETTERS = "ABCDEFGH"
ACTION_LEVEL = "action level"
VIDEO_LEVEL = "video level"
RECORD_KEYS = ("tag", "type", "template_type", "answer_type", "category", "template",
               "new_template", "question_args", "choices", "final_answer", "answer_text",
               "video_interval", "act_idx")


@dataclass(frozen=True)
class ActionTriplet:
    action: str
    t_s: float
    t_e: float

    def __post_init__(self):
        if not self.t_s < self.t_e:
            raise ValueError(f"action {self.action!r} has t_s >= t_e")

    @property
    def duration(self) -> float:
        return self.t_e - self.t_s


@dataclass(frozen=True)
class Video:
    video_id: str
    duration: float
    actions: tuple[ActionTriplet, ...]

    def __post_init__(self):
        acts = tuple(sorted(self.actions, key=lambda a: (a.t_s, a.t_e)))
        object.__setattr__(self, "actions", acts)

    def context(self, interval) -> list[ActionTriplet]:
        lo, hi = interval
        return [a for a in self.actions if a.t_e > lo and a.t_s < hi]


def load_annotations(path) -> list[Video]:
    with open(path) as f:
        raw = json.load(f)
    return parse_annotations(raw)


def parse_annotations(raw) -> list[Video]:
    if isinstance(raw, dict):
        raw = raw.get("videos", [raw])
    videos = []
    for v in raw:
        acts = tuple(ActionTriplet(str(a["action"]), float(a["t_s"]), float(a["t_e"]))
                     for a in v["actions"])
        dur = float(v.get("duration", max((a.t_e for a in acts), default=0.0)))
        videos.append(Video(str(v["video_id"]), dur, acts))
    ids = [v.video_id for v in videos]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate video_id in annotations")
    return videos


def dump_annotations(videos: Sequence[Video]) -> list[dict]:
    return [{"video_id": v.video_id, "duration": v.duration,
             "actions": [{"action": a.action, "t_s": a.t_s, "t_e": a.t_e} for a in v.actions]}
            for v in videos]


@dataclass(frozen=True)
class EventFlowRecord:
    tag: str
    type: str
    template_type: str
    answer_type: str
    category: str
    template: str
    new_template: str
    question_args: list
    choices: str
    final_answer: str
    answer_text: str
    video_interval: list
    act_idx: int

    def to_dict(self) -> dict:
        return asdict(self)

    def choice_list(self) -> list[str]:
        return split_choices(self.choices)


def split_choices(choices: str) -> list[str]:
    out = []
    for i, line in enumerate(choices.split("\n")):
        prefix = f"{LETTERS[i]}. "
        if not line.startswith(prefix):
            raise ValueError(f"malformed choice line {line!r}")
        out.append(line[len(prefix):])
    return out


def validate_record(rec: dict) -> None:
    """Schema check for one record dict. Raises ``ValueError``."""
    if tuple(sorted(rec)) != tuple(sorted(RECORD_KEYS)):
        raise ValueError(f"record keys {sorted(rec)} do not match the schema")
    for k in ("tag", "type", "template_type", "answer_type", "category", "template",
              "new_template", "choices", "final_answer", "answer_text"):
        if not isinstance(rec[k], str):
            raise ValueError(f"{k} must be a string")
    if not isinstance(rec["question_args"], list) or not all(isinstance(a, str) for a in rec["question_args"]):
        raise ValueError("question_args must be a list of strings")
    iv = rec["video_interval"]
    if (not isinstance(iv, list) or len(iv) != 2 or not all(isinstance(x, (int, float)) for x in iv)
            or not iv[0] < iv[1]):
        raise ValueError("video_interval must be [lo, hi] with lo < hi")
    if not isinstance(rec["act_idx"], int) or isinstance(rec["act_idx"], bool):
        raise ValueError("act_idx must be an integer")
    opts = split_choices(rec["choices"])
    if len(set(opts)) != len(opts):
        raise ValueError("choices are not distinct")
    if rec["final_answer"] not in LETTERS[:len(opts)]:
        raise ValueError("final_answer is not a listed letter")
    if opts[LETTERS.index(rec["final_answer"])] != rec["answer_text"]:
        raise ValueError("answer_text does not match the chosen option")


# ---------------------------------------------------------------- rendering

def quote(label: str) -> str:
    return f"'{label}'"


def unquote(arg: str) -> str:
    return arg[1:-1] if len(arg) >= 2 and arg[0] == arg[-1] == "'" else arg


def fmt_seconds(x: float) -> str:
    return f"{x:.1f} seconds"


def fmt_interval(a: float, b: float) -> str:
    return f"[{a:.1f}, {b:.1f}]"


def fmt_sequence(labels: Iterable[str]) -> str:
    return ", ".join(labels)


def fill(template: str, args: Sequence[str]) -> str:
    return template.format(*args)


# ---------------------------------------------------------------- families

class Skip(Exception):
    """Raised when a video cannot support a family instance."""


@dataclass(frozen=True)
class TemplateFamily:
    category: str
    type: str
    level: str
    template: str
    paraphrases: tuple[str, ...]
    builder: Callable = field(repr=False, compare=False)
    n_choices: int = 4
    min_actions: int = 2

    @property
    def arity(self) -> int:
        return self.template.count("{}")


@dataclass
class Draft:
    """What a family builder produces before choices are shuffled."""
    template: str
    paraphrases: tuple[str, ...]
    args: list[str]
    answer: str
    distractors: list[str]
    act_idx: int = -1
    overlap: bool = False
    fixed_order: bool = False


def _unique_labels(acts):
    counts = {}
    for a in acts:
        counts[a.action] = counts.get(a.action, 0) + 1
    return [a for a in acts if counts[a.action] == 1]


def _overlaps(a: ActionTriplet, b: ActionTriplet) -> bool:
    return a.t_e > b.t_s and b.t_e > a.t_s


def _pick(rng, items, n=1):
    idx = rng.choice(len(items), size=n, replace=False)
    return [items[i] for i in idx]


def _label_distractors(rng, acts, exclude, n=3):
    pool = sorted({a.action for a in acts} - set(exclude))
    if len(pool) < n:
        raise Skip("not enough distinct labels for distractors")
    return _pick(rng, pool, n)


def _numeric_distractors(value, render, n=3):
    target = render(value)
    out = []
    for f in (0.8, 1.2, 0.5, 1.5, 2.0, 0.25, 3.0):
        s = render(value * f)
        if s != target and s not in out:
            out.append(s)
        if len(out) == n:
            return out
    raise Skip("could not build distinct numeric distractors")


def _ranked(acts):
    return sorted(acts, key=lambda a: (a.t_s, a.t_e))


def _any_overlap(acts):
    return any(_overlaps(a, b) for i, a in enumerate(acts) for b in acts[i + 1:])


def b_neighbor(rng, acts, fam):
    uniq = _unique_labels(acts)
    order = _ranked(acts)
    after = bool(rng.integers(2))
    cands = [a for a in uniq if (order.index(a) < len(order) - 1 if after else order.index(a) > 0)
             and order[order.index(a) + (1 if after else -1)] in uniq]
    if not cands:
        raise Skip("no action with a uniquely labelled neighbour")
    a = _pick(rng, cands)[0]
    i = order.index(a)
    ans = order[i + 1] if after else order[i - 1]
    tpl, para = (FAMILY_VARIANTS["Action Order Reasoning"]["after"] if after
                 else FAMILY_VARIANTS["Action Order Reasoning"]["before"])
    return Draft(tpl, para, [quote(a.action)], ans.action,
                 _label_distractors(rng, acts, [ans.action, a.action]), i,
                 overlap=_overlaps(a, ans))


def b_causality(rng, acts, fam):
    uniq = _unique_labels(acts)
    cands = []
    for a in uniq:
        prev = [b for b in acts if b.t_e < a.t_s]
        if prev:
            best = max(b.t_e for b in prev)
            top = [b for b in prev if b.t_e == best]
            if len(top) == 1 and top[0] in uniq:
                cands.append((a, top[0]))
    if not cands:
        raise Skip("no action with a unique most recent predecessor")
    a, ans = cands[rng.integers(len(cands))]
    return Draft(fam.template, fam.paraphrases, [quote(a.action)], ans.action,
                 _label_distractors(rng, acts, [ans.action, a.action]), _ranked(acts).index(a))


def b_anticipation(rng, acts, fam):
    uniq = _unique_labels(acts)
    cands = []
    for a in uniq:
        nxt = [b for b in acts if b.t_s > a.t_e]
        if nxt:
            best = min(b.t_s for b in nxt)
            top = [b for b in nxt if b.t_s == best]
            if len(top) == 1 and top[0] in uniq:
                cands.append((a, top[0]))
    if not cands:
        raise Skip("no action with a unique successor")
    a, ans = cands[rng.integers(len(cands))]
    return Draft(fam.template, fam.paraphrases, [quote(a.action)], ans.action,
                 _label_distractors(rng, acts, [ans.action, a.action]), _ranked(acts).index(a))


def _sequence_distractors(rng, answer_seq, pool_labels, n=3):
    """Alternative label sequences of the same length, none equal to the answer."""
    target = fmt_sequence(answer_seq)
    out, tries = [], 0
    while len(out) < n and tries < 200:
        tries += 1
        if rng.random() < 0.5 and len(answer_seq) > 1:
            cand = [answer_seq[i] for i in rng.permutation(len(answer_seq))]
        else:
            src = sorted(set(pool_labels))
            if len(src) < len(answer_seq):
                continue
            cand = _pick(rng, src, len(answer_seq))
        s = fmt_sequence(cand)
        if s != target and s not in out:
            out.append(s)
    if len(out) < n:
        raise Skip("could not build distinct sequence distractors")
    return out


def b_seqpred(rng, acts, fam):
    order = _ranked(acts)
    uniq = _unique_labels(acts)
    k = int(rng.integers(2, 4))
    cands = [i for i in range(len(order)) if i + k < len(order)
             and all(a in uniq for a in order[i:i + k + 1])]
    if not cands:
        raise Skip("sequence too short")
    i = cands[rng.integers(len(cands))]
    run = order[i:i + k + 1]
    ans = [a.action for a in run[1:]]
    return Draft(fam.template, fam.paraphrases, [str(k), quote(order[i].action)], fmt_sequence(ans),
                 _sequence_distractors(rng, ans, [a.action for a in acts if a is not order[i]]), i,
                 overlap=_any_overlap(run))


def b_duration(rng, acts, fam):
    uniq = _unique_labels(acts)
    if not uniq:
        raise Skip("no uniquely labelled action")
    a = _pick(rng, uniq)[0]
    return Draft(fam.template, fam.paraphrases, [quote(a.action)], fmt_seconds(a.duration),
                 _numeric_distractors(a.duration, fmt_seconds), _ranked(acts).index(a))


def b_localization(rng, acts, fam):
    uniq = _unique_labels(acts)
    if not uniq:
        raise Skip("no uniquely labelled action")
    a = _pick(rng, uniq)[0]
    ans = fmt_interval(a.t_s, a.t_e)
    pool = sorted({fmt_interval(b.t_s, b.t_e) for b in acts} - {ans})
    if len(pool) >= 3:
        dis = _pick(rng, pool, 3)
    else:
        dis = list(pool)
        for shift in (0.5, 1.5, 2.0, 3.0):
            s = fmt_interval(a.t_s + shift * a.duration, a.t_e + shift * a.duration)
            if s != ans and s not in dis:
                dis.append(s)
            if len(dis) == 3:
                break
    return Draft(fam.template, fam.paraphrases, [quote(a.action)], ans, dis, _ranked(acts).index(a))


def b_narration(rng, acts, fam, interval):
    lo, hi = interval
    cands = []
    for a in _unique_labels(acts):
        mid = 0.5 * (max(a.t_s, lo) + min(a.t_e, hi))
        ratio = round((mid - lo) / (hi - lo), 2)
        t = lo + ratio * (hi - lo)
        live = _ranked([b for b in acts if b.t_s <= t <= b.t_e])
        if live and live[0] is a:
            cands.append((a, ratio, len(live) > 1))
    if not cands:
        raise Skip("no narration timestamp resolves to a unique label")
    a, ratio, ov = cands[rng.integers(len(cands))]
    return Draft(fam.template, fam.paraphrases, [f"{ratio:.2f}"], a.action,
                 _label_distractors(rng, acts, [a.action]), -1, overlap=ov)


def _pair(rng, acts, need_precedence):
    uniq = _unique_labels(acts)
    pairs = [(a, b) for a in uniq for b in uniq if a is not b
             and (not need_precedence or a.t_e < b.t_s)]
    if not pairs:
        raise Skip("no suitable action pair")
    return pairs[rng.integers(len(pairs))]


def b_gap(rng, acts, fam):
    a, b = _pair(rng, acts, True)
    gap = b.t_s - a.t_e
    return Draft(fam.template, fam.paraphrases, [quote(a.action), quote(b.action)], fmt_seconds(gap),
                 _numeric_distractors(gap, fmt_seconds), _ranked(acts).index(a))


def b_yesno(rng, acts, fam):
    a, b = _pair(rng, acts, False)
    ov = _overlaps(a, b)
    yes = (a.t_e < b.t_s) if not ov else (a.t_s, a.t_e) < (b.t_s, b.t_e)
    return Draft(fam.template, fam.paraphrases, [quote(a.action), quote(b.action)],
                 "Yes" if yes else "No", ["No" if yes else "Yes"], _ranked(acts).index(a),
                 overlap=ov, fixed_order=True)


def _option_set(rng, acts, key, largest):
    uniq = _unique_labels(acts)
    if len(uniq) < 4:
        raise Skip("need four uniquely labelled actions")
    for _ in range(20):
        opts = _pick(rng, uniq, 4)
        vals = [key(a) for a in opts]
        best = max(vals) if largest else min(vals)
        if vals.count(best) == 1:
            ans = opts[vals.index(best)]
            return ans, [o.action for o in opts if o is not ans], opts
    raise Skip("no option set with a unique extreme")


def b_comparison(rng, acts, fam):
    later = bool(rng.integers(2))
    ans, dis, opts = _option_set(rng, acts, lambda a: (a.t_s, a.t_e), later)
    ov = any(_overlaps(ans, o) for o in opts if o is not ans)
    return Draft(fam.template, fam.paraphrases, ["latest" if later else "earliest"], ans.action, dis, -1,
                 overlap=ov)


def b_duration_cmp(rng, acts, fam):
    longest = bool(rng.integers(2))
    ans, dis, _ = _option_set(rng, acts, lambda a: round(a.duration, 6), longest)
    return Draft(fam.template, fam.paraphrases, ["longest" if longest else "shortest"], ans.action, dis, -1)


def b_between(rng, acts, fam):
    uniq = _unique_labels(acts)
    cands = []
    for a in uniq:
        for b in uniq:
            if a is not b and a.t_e < b.t_s:
                mids = [c for c in _ranked(acts) if c.t_s > a.t_e and c.t_e < b.t_s]
                if mids and len({c.action for c in mids}) == len(mids):
                    cands.append((a, b, mids))
    if not cands:
        raise Skip("no pair with actions in between")
    a, b, mids = cands[rng.integers(len(cands))]
    ans = [c.action for c in mids]
    pool = [c.action for c in acts if c is not a and c is not b]
    return Draft(fam.template, fam.paraphrases, [quote(a.action), quote(b.action)], fmt_sequence(ans),
                 _between_distractors(rng, ans, pool), _ranked(acts).index(a))


def _between_distractors(rng, ans, pool):
    target = fmt_sequence(ans)
    src = sorted(set(pool))
    out, tries = [], 0
    while len(out) < 3 and tries < 200:
        tries += 1
        n = int(rng.integers(1, min(len(src), max(len(ans), 1) + 1) + 1))
        cand = _pick(rng, src, n)
        s = fmt_sequence(cand)
        if s != target and s not in out:
            out.append(s)
    if len(out) < 3:
        raise Skip("could not build in-between distractors")
    return out


def b_transcription(rng, acts, fam):
    if len(_unique_labels(acts)) != len(acts) or len(acts) < 3:
        raise Skip("transcription needs three or more uniquely labelled actions")
    ans = [a.action for a in _ranked(acts)]
    return Draft(fam.template, fam.paraphrases, [], fmt_sequence(ans),
                 _permutation_distractors(rng, ans), -1, overlap=_any_overlap(acts))


def _permutation_distractors(rng, ans):
    target = fmt_sequence(ans)
    out, tries = [], 0
    while len(out) < 3 and tries < 500:
        tries += 1
        s = fmt_sequence([ans[i] for i in rng.permutation(len(ans))])
        if s != target and s not in out:
            out.append(s)
    if len(out) < 3:
        raise Skip("too few distinct permutations")
    return out


def b_extreme(rng, acts, fam):
    order = _ranked(acts)
    last = bool(rng.integers(2))
    ans = order[-1] if last else order[0]
    if ans not in _unique_labels(acts):
        raise Skip("extreme action label is not unique")
    if len(order) > 1:
        runner = order[-2] if last else order[1]
        if (runner.t_s, runner.t_e) == (ans.t_s, ans.t_e):
            raise Skip("tied extreme")
    ov = any(_overlaps(ans, o) for o in order if o is not ans)
    return Draft(fam.template, fam.paraphrases, ["last" if last else "first"], ans.action,
                 _label_distractors(rng, acts, [ans.action]), -1, overlap=ov)


def b_sorting(rng, acts, fam):
    uniq = _unique_labels(acts)
    if len(uniq) < 3:
        raise Skip("need three uniquely labelled actions")
    chosen = _pick(rng, uniq, 3)
    ans = [a.action for a in _ranked(chosen)]
    shown = [a.action for a in chosen]
    return Draft(fam.template, fam.paraphrases, [fmt_sequence(shown)], fmt_sequence(ans),
                 _permutation_distractors(rng, ans), -1, overlap=_any_overlap(chosen))


FAMILY_VARIANTS = {
    "Action Order Reasoning": {
        "before": ("What action happened immediately before {} in the video?",
                   ("What activity took place directly prior to {} in the video?",
                    "Which step came right before {}?",
                    "Just before {}, what did the person do?")),
        "after": ("What action happened immediately after {} in the video?",
                  ("What activity took place directly following {} in the video?",
                   "Which step came right after {}?",
                   "Right after {}, what did the person do?")),
    },
}

_SPECS = [
    ("Action Order Reasoning", "temporal_neighbor", ACTION_LEVEL,
     "What action happened immediately before {} in the video?", (), b_neighbor, 4, 2),
    ("Temporal Causality", "temporal_causality", ACTION_LEVEL,
     "What was the most recent action that led to {}?",
     ("Which action most recently preceded and led to {}?",
      "What finished most recently before {} started?",
      "Which earlier step directly set up {}?"), b_causality, 4, 2),
    ("Action Anticipation", "action_anticipation", ACTION_LEVEL,
     "What action will the person perform immediately after {}?",
     ("Once {} is done, what will the person do next?",
      "What is the next action to start after {} finishes?",
      "After finishing {}, which action follows?"), b_anticipation, 4, 2),
    ("Sequential Prediction", "sequential_prediction", ACTION_LEVEL,
     "Predict the next {} actions after {}.",
     ("What are the next {} steps following {}?",
      "List the {} actions that come after {}.",
      "Which {} actions follow {} in order?"), b_seqpred, 4, 3),
    ("Duration Estimation", "duration_estimation", ACTION_LEVEL,
     "How long does the action {} take?",
     ("What is the duration of {}?",
      "For how long does {} last?",
      "How much time does {} take to complete?"), b_duration, 4, 1),
    ("Temporal Localization", "temporal_localization", ACTION_LEVEL,
     "When does the action {} occur in the video?",
     ("At what time interval does {} happen?",
      "During which span of the video is {} performed?",
      "Locate the time window of {}."), b_localization, 4, 1),
    ("Temporal QA from Narration", "narration_qa", ACTION_LEVEL,
     "What action is taking place at time ratio {}?",
     ("Which action is happening at relative time {} of the clip?",
      "At time ratio {}, what is the person doing?",
      "What is being done at the {} point of the clip?"), b_narration, 4, 2),
    ("Temporal Gap Estimation", "temporal_gap", VIDEO_LEVEL,
     "How much time passed between {} and {}?",
     ("What is the time gap between the end of {} and the start of {}?",
      "How long after {} did {} begin?",
      "How much time elapsed from {} to {}?"), b_gap, 4, 2),
    ("Temporal Yes/No", "temporal_yes_no", VIDEO_LEVEL,
     "Did {} happen before {}?",
     ("Was {} completed before {} started?",
      "Did {} take place prior to {}?",
      "Is it true that {} came before {}?"), b_yesno, 2, 2),
    ("Temporal Comparison", "temporal_comparison", VIDEO_LEVEL,
     "Which of these actions occurred {}?",
     ("Among these actions, which one happened {}?",
      "Which option took place {} of all?",
      "Select the action that occurred {}."), b_comparison, 4, 4),
    ("Duration Comparison", "duration_comparison", VIDEO_LEVEL,
     "Which action took the {}?",
     ("Which of these actions lasted the {}?",
      "Among the options, which action ran the {}?",
      "Select the action with the {} duration."), b_duration_cmp, 4, 4),
    ("In-between Action", "in_between", VIDEO_LEVEL,
     "Which actions occurred between {} and {}?",
     ("What happened after {} and before {}?",
      "Which steps were performed between {} and {}?",
      "List the actions in between {} and {}."), b_between, 4, 3),
    ("Transcription", "transcription", VIDEO_LEVEL,
     "Which option best represents the sequence of actions in the video?",
     ("Which option lists the actions in the video in order?",
      "Pick the option that transcribes the action sequence of the clip.",
      "Which choice gives the full ordered list of actions?"), b_transcription, 4, 3),
    ("Action Order Reasoning (Extreme)", "temporal_extreme", VIDEO_LEVEL,
     "Which action happened {} in the video?",
     ("What was done {} in the video?",
      "Which step occurred {} in the clip?",
      "Identify the action performed {} in the video."), b_extreme, 4, 4),
    ("Action Order Sorting", "order_sorting", VIDEO_LEVEL,
     "Arrange these actions in the correct order: {}.",
     ("Put these actions in chronological order: {}.",
      "Sort the following steps by when they happened: {}.",
      "What is the correct time order of: {}?"), b_sorting, 4, 3),
]

FAMILIES = {c: TemplateFamily(c, t, lvl, tpl, para, fn, nc, mn)
            for c, t, lvl, tpl, para, fn, nc, mn in _SPECS}
FAMILY_NAMES = tuple(FAMILIES)


def instantiate(family: TemplateFamily, video: Video, seed: int, interval=None) -> tuple[EventFlowRecord, bool]:
    """Build one record, returning ``(record, overlap_flag)``; raise ``Skip`` if
    the video cannot support the family.
    """
    if interval is None:
        interval = (min((a.t_s for a in video.actions), default=0.0), video.duration)
    interval = (round(float(interval[0]), 2), round(float(interval[1]), 2))
    if not interval[0] < interval[1]:
        raise Skip("empty interval")
    acts = video.context(interval)
    if len(acts) < max(family.min_actions, 1):
        raise Skip("not enough actions in the interval")
    rng = np.random.default_rng(seed)
    if family.builder is b_narration:
        d = b_narration(rng, acts, family, interval)
    else:
        d = family.builder(rng, acts, family)
    opts = [d.answer] + list(d.distractors)
    if len(opts) != family.n_choices or len(set(opts)) != len(opts):
        raise Skip("choices are not distinct")
    if d.fixed_order:
        opts = ["Yes", "No"]
    else:
        opts = [opts[i] for i in rng.permutation(len(opts))]
    letter = LETTERS[opts.index(d.answer)]
    para = d.paraphrases[int(rng.integers(len(d.paraphrases)))] if d.paraphrases else d.template
    tt = "Yes/No" if family.n_choices == 2 else "MCQ"
    rec = EventFlowRecord(
        tag=family.level, type=family.type, template_type=tt, answer_type="choice",
        category=family.category, template=d.template, new_template=para,
        question_args=list(d.args),
        choices="\n".join(f"{LETTERS[i]}. {o}" for i, o in enumerate(opts)),
        final_answer=letter, answer_text=d.answer,
        video_interval=[interval[0], interval[1]], act_idx=int(d.act_idx))
    return rec, d.overlap


def question_text(rec: EventFlowRecord | dict, paraphrased: bool = True) -> str:
    r = rec if isinstance(rec, dict) else rec.to_dict()
    return fill(r["new_template"] if paraphrased else r["template"], r["question_args"])


# ---------------------------------------------------------------- ground truth

def derive_ground_truth(family: str, args: Sequence[str], actions: Sequence[ActionTriplet],
                        options: Sequence[str] = (), interval=None):
    """Answer text and an auxiliary value, from the times alone.

    ``options`` is required for families that pick among the listed choices.
    """
    acts = _ranked(actions)
    by = {a.action: a for a in acts}
    lab = [unquote(x) for x in args]
    if family == "Action Order Reasoning":
        raise ValueError("use derive_neighbor with an explicit direction")
    if family == "Temporal Causality":
        a = by[lab[0]]
        prev = [b for b in acts if b.t_e < a.t_s]
        b = max(prev, key=lambda x: x.t_e)
        return b.action, b.t_e
    if family == "Action Anticipation":
        a = by[lab[0]]
        b = min((b for b in acts if b.t_s > a.t_e), key=lambda x: x.t_s)
        return b.action, b.t_s
    if family == "Sequential Prediction":
        k, a = int(lab[0]), by[lab[1]]
        i = acts.index(a)
        seq = [x.action for x in acts[i + 1:i + 1 + k]]
        return fmt_sequence(seq), seq
    if family == "Duration Estimation":
        a = by[lab[0]]
        return fmt_seconds(a.duration), a.duration
    if family == "Temporal Localization":
        a = by[lab[0]]
        return fmt_interval(a.t_s, a.t_e), (a.t_s, a.t_e)
    if family == "Temporal QA from Narration":
        lo, hi = interval
        t = lo + float(lab[0]) * (hi - lo)
        live = [a for a in acts if a.t_s <= t <= a.t_e]
        return live[0].action, t
    if family == "Temporal Gap Estimation":
        a, b = by[lab[0]], by[lab[1]]
        return fmt_seconds(b.t_s - a.t_e), b.t_s - a.t_e
    if family == "Temporal Yes/No":
        a, b = by[lab[0]], by[lab[1]]
        if _overlaps(a, b):
            yes = (a.t_s, a.t_e) < (b.t_s, b.t_e)
        else:
            yes = a.t_e < b.t_s
        return ("Yes" if yes else "No"), yes
    if family == "Temporal Comparison":
        opts = [by[o] for o in options]
        pick = max if lab[0] == "latest" else min
        a = pick(opts, key=lambda x: (x.t_s, x.t_e))
        return a.action, a.t_s
    if family == "Duration Comparison":
        opts = [by[o] for o in options]
        pick = max if lab[0] == "longest" else min
        a = pick(opts, key=lambda x: x.duration)
        return a.action, a.duration
    if family == "In-between Action":
        a, b = by[lab[0]], by[lab[1]]
        mids = [c.action for c in acts if c.t_s > a.t_e and c.t_e < b.t_s]
        return fmt_sequence(mids), mids
    if family == "Transcription":
        seq = [a.action for a in acts]
        return fmt_sequence(seq), seq
    if family == "Action Order Reasoning (Extreme)":
        a = acts[-1] if lab[0] == "last" else acts[0]
        return a.action, a.t_s
    if family == "Action Order Sorting":
        shown = [by[x] for x in lab[0].split(", ")]
        seq = [a.action for a in _ranked(shown)]
        return fmt_sequence(seq), seq
    raise ValueError(f"unknown family {family!r}")


def derive_neighbor(args, actions, after: bool):
    acts = _ranked(actions)
    i = [a.action for a in acts].index(unquote(args[0]))
    b = acts[i + 1] if after else acts[i - 1]
    return b.action, i


def record_ground_truth(rec: EventFlowRecord | dict, video: Video):
    r = rec if isinstance(rec, dict) else rec.to_dict()
    acts = video.context(r["video_interval"])
    if r["category"] == "Action Order Reasoning":
        return derive_neighbor(r["question_args"], acts, "after" in r["template"])[0]
    return derive_ground_truth(r["category"], r["question_args"], acts,
                               split_choices(r["choices"]), r["video_interval"])[0]


def synthesize_gt_summary(video: Video, interval=None) -> list[str]:
    if interval is None:
        return [a.action for a in video.actions]
    lo, hi = interval
    if lo < 0 or hi > video.duration + 1e-9 or not lo < hi:
        raise ValueError("interval outside the video")
    return [a.action for a in video.context(interval)]


# ---------------------------------------------------------------- datasets

def clip_intervals(video: Video, clip_len: int | None):
    """Candidate context intervals: runs of ``clip_len`` consecutive actions."""
    acts = video.actions
    if clip_len is None or clip_len >= len(acts):
        if not acts:
            return []
        return [(acts[0].t_s, max(a.t_e for a in acts))]
    return [(acts[i].t_s, max(a.t_e for a in acts[i:i + clip_len]))
            for i in range(len(acts) - clip_len + 1)]


def split_videos(videos: Sequence[Video], val_fraction: float, seed: int):
    ids = sorted(v.video_id for v in videos)
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(len(ids))]
    n_val = int(round(val_fraction * len(ids)))
    if len(ids) > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), len(ids) - 1)
    return sorted(perm[n_val:]), sorted(perm[:n_val])


def generate_dataset(videos: Sequence[Video], counts: dict, seed: int, clip_len: int | None = None,
                     val_fraction: float = 0.2, max_tries: int = 50):
    """Return ``(lines, manifest)``: dataset rows and the split manifest.

    Each row wraps a record with its id, source video and overlap flag.
    Counts are per split-agnostic family; records inherit their video's split.
    """
    for name in counts:
        if name not in FAMILIES:
            raise ValueError(f"unknown family {name!r}")
    train_ids, val_ids = split_videos(videos, val_fraction, seed)
    val_set = set(val_ids)
    rng = np.random.default_rng(seed)
    by_id = {v.video_id: v for v in videos}
    ordered = sorted(by_id)
    lines, manifest = [], {"train": [], "val": []}
    produced = {}
    for fi, name in enumerate(FAMILY_NAMES):
        n = int(counts.get(name, 0))
        fam = FAMILIES[name]
        made = 0
        for j in range(n):
            for _ in range(max_tries):
                vid = by_id[ordered[int(rng.integers(len(ordered)))]] if ordered else None
                if vid is None:
                    break
                ivs = clip_intervals(vid, clip_len)
                if not ivs:
                    continue
                iv = ivs[int(rng.integers(len(ivs)))]
                try:
                    rec, ov = instantiate(fam, vid, int(rng.integers(2 ** 31)), iv)
                except Skip:
                    continue
                rid = f"{fam.type}-{made:05d}"
                lines.append({"id": rid, "video_id": vid.video_id, "overlap": bool(ov),
                              "record": rec.to_dict()})
                manifest["val" if vid.video_id in val_set else "train"].append(rid)
                made += 1
                break
        produced[name] = made
    levels = {ACTION_LEVEL: 0, VIDEO_LEVEL: 0}
    for ln in lines:
        levels[ln["record"]["tag"]] += 1
    total = max(len(lines), 1)
    manifest["videos"] = {"train": train_ids, "val": val_ids}
    manifest["counts"] = produced
    manifest["level_fractions"] = {k: v / total if lines else 0.0 for k, v in levels.items()}
    return lines, manifest


def make_toy_annotations(n_videos: int = 30, n_actions: int = 8, n_labels: int = 16, seed: int = 0,
                         overlap_prob: float = 0.0) -> list[Video]:
    """Random non-repeating action scripts with positive durations and gaps."""
    pool = [f"step {chr(ord('a') + i // 26)}{chr(ord('a') + i % 26)}" for i in range(n_labels)]
    pool = TOY_LABELS[:n_labels] if n_labels <= len(TOY_LABELS) else pool
    if n_actions > len(pool):
        raise ValueError("more actions per video than labels")
    rng = np.random.default_rng(seed)
    videos = []
    for v in range(n_videos):
        labels = [pool[i] for i in rng.permutation(len(pool))[:n_actions]]
        t, acts = float(np.round(rng.uniform(0, 5), 2)), []
        for lab in labels:
            dur = float(np.round(rng.uniform(2, 30), 2))
            ts = t
            if acts and rng.random() < overlap_prob:
                ts = max(acts[-1].t_s + 0.5, acts[-1].t_e - 1.0)
            acts.append(ActionTriplet(lab, round(ts, 2), round(ts + dur, 2)))
            t = round(ts + dur + float(np.round(rng.uniform(0.5, 8), 2)), 2)
        videos.append(Video(f"toy{v:03d}", round(t + 2.0, 2), tuple(acts)))
    return videos


TOY_LABELS = (
    "crack eggs", "whisk batter", "heat pan", "pour batter", "flip pancake", "plate food",
    "chop onion", "dice tomato", "boil water", "add pasta", "drain pasta", "grate cheese",
    "wash lettuce", "slice bread", "toast bread", "spread butter", "peel garlic", "stir sauce",
    "season dish", "serve plate",
)


# published category shares; other families split the rest of their level evenly
PUBLISHED_SHARES = {"Action Order Reasoning": 0.115, "Temporal Localization": 0.087,
                    "Duration Estimation": 0.085}
LEVEL_SHARES = {ACTION_LEVEL: 0.391, VIDEO_LEVEL: 0.609}


def family_mix() -> dict:
    """Per-family fractions following the published level and category shares."""
    mix = dict(PUBLISHED_SHARES)
    for level, share in LEVEL_SHARES.items():
        names = [n for n in FAMILY_NAMES if FAMILIES[n].level == level]
        rest = [n for n in names if n not in mix]
        left = share - sum(mix.get(n, 0.0) for n in names)
        for n in rest:
            mix[n] = left / len(rest)
    return {n: mix[n] for n in FAMILY_NAMES}


def mix_counts(total: int) -> dict:
    """Integer counts summing to ``total`` (largest remainder rounding)."""
    mix = family_mix()
    raw = {n: f * total for n, f in mix.items()}
    out = {n: int(math.floor(x)) for n, x in raw.items()}
    order = sorted(FAMILY_NAMES, key=lambda n: (-(raw[n] - out[n]), FAMILY_NAMES.index(n)))
    for n in order[:total - sum(out.values())]:
        out[n] += 1
    return out
