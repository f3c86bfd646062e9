import numpy as np
import pytest

from llm_optim import env_numeric as en
from llm_optim import env_poem as ep
from llm_optim.backends import CannedBackend, ScriptedGradientBackend, ScriptedPoetBackend, sgd_run
from llm_optim.core import Feedback, FeedbackKind, InteractionRecord
from llm_optim.errors import ExhaustedScript, ParseFailure, RunAborted
from llm_optim.optimizer import (
    FORMAT_REMINDER,
    REPEAT_NOTICE,
    Decision,
    NumericTask,
    OptimizerConfig,
    PoemTask,
    build_optimizer_messages,
    estimate_reward,
    normalize_mode,
    parse_point,
    propose,
    run_spo,
    select,
)

BOOTH = en.get_function("booth")
LINE7 = "the cat sat on the big mat"


def booth_task(start=(0.0, 0.0)):
    return NumericTask(BOOTH, en.Point(*start))


def numeric_record(step, x, feedback=None, accepted=True):
    r = en.reward(BOOTH, en.Point(*x))
    fb = feedback if feedback is not None else en.directional_feedback(BOOTH, en.Point(*x))
    p = en.format_point(x)
    return InteractionRecord(step, p, p, r, fb, accepted)


def user_text(messages):
    return "\n".join(m.content for m in messages if m.role == "user")


class TestParsePoint:
    @pytest.mark.parametrize(
        "text, point",
        [
            ("x = [1.5, -2.0]", (1.5, -2.0)),
            ("I think [0,0] was bad; next try x = [2.25, 3]", (2.25, 3.0)),
            ("x=[ -1e-3 ,+.5 ]", (-0.001, 0.5)),
        ],
    )
    def test_ok(self, text, point):
        assert parse_point(text) == point

    @pytest.mark.parametrize("text", ["let's decrease x2", "[1, 2, 3", "x = [a, b]", ""])
    def test_failure(self, text):
        with pytest.raises(ParseFailure):
            parse_point(text)


@pytest.mark.parametrize(
    "current, candidate, decision",
    [(0.5, 0.75, Decision.ACCEPT_CANDIDATE), (0.5, 0.5, Decision.ACCEPT_CANDIDATE), (0.75, 0.5, Decision.KEEP_CURRENT)],
)
def test_select(current, candidate, decision):
    assert select(current, candidate) is decision


def test_modes():
    assert normalize_mode("reward-only") == "reward_only"
    with pytest.raises(ValueError):
        normalize_mode("gradient")
    with pytest.raises(ValueError):
        OptimizerConfig(history_budget=0)


class TestPrompts:
    def test_directional_feedback_follows_observations(self):
        cur = numeric_record(0, (0.0, 0.0))
        text = user_text(build_optimizer_messages(booth_task(), [cur], cur, "directional"))
        obs = "x = [0.000000, 0.000000]; y = 74.000000"
        assert obs + "\n\n" + cur.feedback.text + "\n\nYou should incorporate the suggestion" in text

    def test_reward_only_has_no_feedback_block(self):
        cur = numeric_record(0, (0.0, 0.0))
        text = user_text(build_optimizer_messages(booth_task(), [cur], cur, "reward_only"))
        assert "incorporate the suggestion" not in text
        assert "gradient" not in text

    def test_current_record_is_last_observation(self):
        a, b, c = numeric_record(0, (0, 0)), numeric_record(1, (5, 5)), numeric_record(2, (1, 1))
        text = user_text(build_optimizer_messages(booth_task(), [a, b, c], b, "directional"))
        lines = [line for line in text.splitlines() if line.startswith("x = [")]
        assert lines == [
            "x = [0.000000, 0.000000]; y = 74.000000",
            "x = [1.000000, 1.000000]; y = 20.000000",
            "x = [5.000000, 5.000000]; y = 164.000000",
        ]

    def test_repeat_notice(self):
        cur = numeric_record(0, (0.0, 0.0))
        assert REPEAT_NOTICE in user_text(build_optimizer_messages(booth_task(), [cur], cur, "directional", True))
        assert REPEAT_NOTICE not in user_text(build_optimizer_messages(booth_task(), [cur], cur, "directional"))

    def test_poem_history_fields(self):
        task = PoemTask(ep.PoemConstraint.uniform(7))
        score = ep.score_poem(LINE7, task.constraint)
        fb = ep.directional_feedback(score, task.constraint)
        r0 = InteractionRecord(0, "Write a poem.", LINE7, score.reward, fb)
        r1 = InteractionRecord(1, "Count syllables.", LINE7, score.reward, Feedback(FeedbackKind.SYNTHESIZED, "Add lines."))
        text = user_text(build_optimizer_messages(task, [r0, r1], r1, "directional"))
        for field in (
            f'The Assignment: "{task.assignment}"',
            "Your Instruction: \nWrite a poem.",
            "Student's Poem: \n" + LINE7,
            "Teacher's Feedback: \nThe poem scored 0.25",
            "Line 2 is missing.",
            "Feedback from another student:\nAdd lines.",
        ):
            assert field in text
        assert "come up with better instructions" in text


class TestPropose:
    def test_retries_then_succeeds(self):
        backend = CannedBackend(["no idea", "still none", "x = [1, 2]"])
        cur = numeric_record(0, (0.0, 0.0))
        cand = propose(backend, booth_task(), [cur], cur, "directional")
        assert cand.parameter == "[1.000000, 2.000000]" and cand.raw_completion == "x = [1, 2]"
        last = backend.calls[-1]
        assert last[-1].content == FORMAT_REMINDER and last[-2].content == "still none"

    def test_retry_budget_exhausted(self):
        cur = numeric_record(0, (0.0, 0.0))
        with pytest.raises(ParseFailure):
            propose(CannedBackend(["a", "b", "c", "x = [1, 1]"]), booth_task(), [cur], cur, "directional")

    def test_poem_candidate_is_stripped_reply(self):
        task = PoemTask(ep.PoemConstraint.uniform(7))
        cur = InteractionRecord(0, "Write.", LINE7, 0.25)
        cand = propose(CannedBackend(["  Count carefully.\n"]), task, [cur], cur, "reward_only")
        assert cand.parameter == "Count carefully."


class TestEstimate:
    def test_numeric_identity(self):
        est = estimate_reward(booth_task(), None, "[1, 3]", 1)
        assert est.mean == 0.0 and est.output == "[1, 3]"

    def test_poem_mean(self):
        task = PoemTask(ep.PoemConstraint.uniform(7))
        poems = ["\n".join([LINE7] * 4), "\n".join([LINE7] * 2), "\n".join([LINE7] * 3)]
        est = estimate_reward(task, CannedBackend(poems), "Write.", 3)
        assert [s[1] for s in est.samples] == [1.0, 0.5, 0.75]
        assert est.mean == pytest.approx(0.75)

    def test_single_sample(self):
        task = PoemTask(ep.PoemConstraint.uniform(7))
        assert estimate_reward(task, CannedBackend([LINE7]), "Write.", 1).mean == 0.25
        with pytest.raises(ValueError):
            estimate_reward(task, CannedBackend([]), "Write.", 0)


class TestRunSpo:
    def test_zero_steps(self):
        trace = run_spo(booth_task(), CannedBackend([]), OptimizerConfig(steps=0))
        assert len(trace.records) == 1
        assert trace.records[0].parameter == "[0.000000, 0.000000]" and trace.records[0].reward == -74.0

    def test_gradient_follower_is_monotone_on_booth(self):
        trace = run_spo(booth_task(), ScriptedGradientBackend(eta=0.05), OptimizerConfig(steps=10))
        accepted = [r.candidate_estimate for r in trace.records if r.accepted]
        assert accepted == sorted(accepted)
        assert len(trace.records) == 11
        assert trace.meta["status"] == "ok" and trace.meta["function"] == "booth"

    def test_matches_quantized_sgd(self):
        trace = run_spo(booth_task(), ScriptedGradientBackend(eta=0.05), OptimizerConfig(steps=10))
        sgd = sgd_run(BOOTH, en.Point(0.0, 0.0), 0.05, 10, decimals=6)
        assert [r.parameter for r in trace.records] == [r.parameter for r in sgd.records]

    def test_reward_only_mode(self):
        backend = CannedBackend([f"x = [{i}, {i}]" for i in range(1, 6)])
        trace = run_spo(booth_task(), backend, OptimizerConfig(steps=5, feedback_mode="reward-only"))
        assert all(r.feedback.kind is FeedbackKind.NONE for r in trace.records)
        for call in backend.calls:
            assert "incorporate the suggestion" not in user_text(call)

    def test_rejected_candidates_do_not_move_the_active_point(self):
        replies = ["x = [1, 3]", "x = [9, 9]", "x = [1.5, 3]"]
        backend = CannedBackend(replies)
        trace = run_spo(booth_task(), backend, OptimizerConfig(steps=3, feedback_mode="reward_only"))
        assert [r.accepted for r in trace.records] == [True, True, False, False]
        # the prompt after a rejection still ends with the active point
        last_obs = [l for l in user_text(backend.calls[2]).splitlines() if l.startswith("x = [")][-1]
        assert last_obs.startswith("x = [1.000000, 3.000000]")
        assert [r.current_estimate for r in trace.records[1:]] == [-74.0, 0.0, 0.0]

    def test_repeat_triggers_notice(self):
        backend = CannedBackend(["x = [0, 0]", "x = [1, 1]", "x = [2, 2]"])
        run_spo(booth_task(), backend, OptimizerConfig(steps=3))
        assert REPEAT_NOTICE not in user_text(backend.calls[0])
        assert REPEAT_NOTICE in user_text(backend.calls[1])
        assert REPEAT_NOTICE not in user_text(backend.calls[2])

    def test_synthesized_mode_uses_the_synthesizer(self):
        opt = CannedBackend(["x = [1, 1]", "x = [2, 2]"])
        synth = CannedBackend(["Increase x1 by 1.", "Increase x2 by 1.", "Decrease x1 by 0.5."])
        trace = run_spo(booth_task(), opt, OptimizerConfig(steps=2, feedback_mode="synthesized"), synthesizer_backend=synth)
        assert [r.feedback.text for r in trace.records] == ["Increase x1 by 1.", "Increase x2 by 1.", "Decrease x1 by 0.5."]
        assert all(r.feedback.kind is FeedbackKind.SYNTHESIZED for r in trace.records)
        assert "Increase x1 by 1." in user_text(opt.calls[0])
        # the synthesizer for step 2 saw the records sampled for that step
        assert user_text(synth.calls[2]).count("===================") == 3

    def test_failure_keeps_partial_trace(self):
        with pytest.raises(RunAborted) as exc:
            run_spo(booth_task(), CannedBackend(["x = [1, 1]"]), OptimizerConfig(steps=3))
        trace = exc.value.trace
        assert isinstance(exc.value.cause, ExhaustedScript)
        assert trace.meta["status"] == "failed" and len(trace.records) == 2

    def test_poem_run(self):
        task = PoemTask(ep.PoemConstraint.uniform(7))
        trace = run_spo(
            task, ScriptedGradientBackend(), OptimizerConfig(steps=4), agent_backend=ScriptedPoetBackend(seed=0)
        )
        assert trace.meta["M"] == 3 and trace.meta["constraint"] == "syllables-4x7"
        assert trace.records[0].parameter == task.initial_instruction
        assert trace.records[1].parameter == "Write every line with exactly 7 syllables."
        accepted = [r.reward for r in trace.records if r.accepted]
        assert accepted == sorted(accepted)
        assert all(0.0 <= r.reward <= 1.0 for r in trace.records)

    def test_numeric_default_m(self):
        trace = run_spo(booth_task(), ScriptedGradientBackend(), OptimizerConfig(steps=1))
        assert trace.meta["M"] == 1


def test_estimates_are_fresh_per_candidate():
    rng = np.random.default_rng(0)
    starts = [en.Point(*rng.uniform(-10, 10, 2)) for _ in range(3)]
    for start in starts:
        trace = run_spo(NumericTask(BOOTH, start), ScriptedGradientBackend(eta=0.05), OptimizerConfig(steps=3))
        for r in trace.records:
            assert r.candidate_estimate == r.reward
