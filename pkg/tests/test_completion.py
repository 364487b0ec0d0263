"""Test the completion client, the answer parsers and the LLM policy."""
import json
from dataclasses import replace
from datetime import datetime
from io import BytesIO
from urllib.error import HTTPError, URLError
from urllib.request import HTTPHandler, build_opener, install_opener
from urllib.response import addinfourl

import pytest
import voluptuous as vol
from dateutil import parser, tz

from step_planner.completion import (
    CASSETTE_MISS,
    FORMAT_REMINDER,
    HTTP_STATUS,
    TIMEOUT,
    Cassette,
    CassetteFileError,
    CompletionClient,
    ExpectedForm,
    LLMSettings,
    PromptBundle,
    TransportError,
    TransportMode,
    parse_action_line,
    parse_subgoal,
    parse_verdict,
)
from step_planner.decompose import (
    BackendUnavailable,
    ContextMode,
    DecomposerOutput,
    GrammarError,
    build_context,
)
from step_planner.decompositionpolicy import DecompositionPolicy
from step_planner.planner import EV_VERDICT, FailureKind, run_episode
from step_planner.tree import SubgoalTree
from step_planner.world import DEFAULT_EMBODIMENT, observe

TEST_URL = "http://127.0.0.1/v1"
SETTINGS = LLMSettings(base_url=TEST_URL, model="test-model", api_key="secret")
BUNDLE = PromptBundle("system", "Task: move mug onto table", ExpectedForm.SUBGOAL_LINE)


def mock_response(req, data: bytes):
    """Return an HttpResponse object with the given data."""
    resp = addinfourl(BytesIO(data), "message", req.get_full_url())
    resp.code = 200
    resp.msg = "OK"
    return resp


def completion_payload(content) -> bytes:
    """Return a chat completions payload answering content."""
    return json.dumps(
        {"choices": [{"message": {"role": "assistant", "content": content}}]}
    ).encode("utf-8")


class MockHTTPHandler(HTTPHandler):
    """Mock HTTPHandler answering every request with SUBGOAL: grasp mug."""

    requests = []

    def http_open(self, req):
        """Record req and return a completion."""
        MockHTTPHandler.requests.append(req)
        return mock_response(req, completion_payload("SUBGOAL: grasp mug"))


class MockHTTPHandlerHTTPError(HTTPHandler):
    """Mock HTTPHandler with an HTTPError."""

    def http_open(self, req):
        """Provide http_open to raise exception."""
        raise HTTPError(req.get_full_url(), 503, "Service Unavailable", None, None)


class MockHTTPHandlerURLError(HTTPHandler):
    """Mock HTTPHandler with an URLError."""

    def http_open(self, req):
        """Provide http_open to raise exception."""
        raise URLError("timed out")


class MockHTTPHandlerMalformed(HTTPHandler):
    """Mock HTTPHandler returning a payload without choices."""

    def http_open(self, req):
        """Return an empty choices list."""
        return mock_response(req, b'{"choices": []}')


class MockHTTPHandlerNotJSON(HTTPHandler):
    """Mock HTTPHandler returning an HTML error page with status 200."""

    def http_open(self, req):
        """Return a body that is not JSON."""
        return mock_response(req, b"<html>bad gateway</html>")


class MockHTTPHandlerNotUTF8(HTTPHandler):
    """Mock HTTPHandler returning bytes that are not UTF-8."""

    def http_open(self, req):
        """Return undecodable bytes."""
        return mock_response(req, b"\xff\xfe\xfa")


class StubClient:
    """Completion client answering from a list."""

    def __init__(self, *answers):
        """Construct StubClient; an exception answer is raised."""
        self.answers = list(answers)
        self.bundles = []

    def complete(self, bundle):
        """Return the next answer."""
        self.bundles.append(bundle)
        answer = self.answers.pop(0)
        if isinstance(answer, Exception):
            raise answer
        return answer


@pytest.fixture
def opener():
    """Install the opener of the given handler; restore the default after."""

    def install(handler):
        install_opener(build_opener(handler))

    yield install
    install_opener(None)


@pytest.fixture
def ctx(kitchen):
    """Return a context for the kitchen."""
    tree = SubgoalTree("move mug onto table")
    return build_context(
        tree, tree.root, observe(kitchen), DEFAULT_EMBODIMENT, ContextMode.FULL_STEP
    )


class TestSettings:
    """Test LLMSettings and PromptBundle."""

    def test_from_env(self):
        """Test environment values are coerced and overridden."""
        settings = LLMSettings.from_env(
            {
                "STEP_LLM_BASE_URL": TEST_URL,
                "STEP_LLM_MODEL": "test-model",
                "STEP_LLM_TIMEOUT": "5",
                "STEP_LLM_RETRIES": "1",
            },
            {"temperature": 0.5},
        )
        assert settings.configured
        assert settings.timeout == 5.0
        assert settings.retries == 1
        assert settings.temperature == 0.5
        assert not LLMSettings.from_env({}).configured

    def test_invalid_env(self):
        """Test a non-positive timeout is rejected."""
        with pytest.raises(vol.Invalid):
            LLMSettings.from_env({"STEP_LLM_TIMEOUT": "0"})

    def test_digest(self):
        """Test the digest depends on the prompt, model and temperature."""
        assert BUNDLE.digest("a") == BUNDLE.digest("a")
        assert BUNDLE.digest("a") != BUNDLE.digest("b")
        assert BUNDLE.digest("a", 0.0) != BUNDLE.digest("a", 0.7)
        reminded = BUNDLE.with_reminder()
        assert reminded.user_text.endswith(FORMAT_REMINDER)
        assert reminded.digest("a") != BUNDLE.digest("a")


class TestParsers:
    """Test the answer parsers."""

    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("SUBGOAL: grasp mug", DecomposerOutput.subgoal("grasp mug")),
            ("  subgoal:walk to table \n", DecomposerOutput.subgoal("walk to table")),
            ("DONE", DecomposerOutput.end()),
            ("\ndone\n", DecomposerOutput.end()),
        ],
    )
    def test_subgoal(self, raw, expected):
        """Test well formed subgoal answers."""
        assert parse_subgoal(raw) == expected

    @pytest.mark.parametrize(
        "raw",
        [
            "",
            "grasp mug",
            "SUBGOAL:",
            "ACTION: grasp mug",
            "SUBGOAL: grasp mug\nSUBGOAL: walk to table",
        ],
    )
    def test_subgoal_grammar_error(self, raw):
        """Test malformed subgoal answers."""
        with pytest.raises(GrammarError) as error:
            parse_subgoal(raw)
        assert error.value.raw == raw

    def test_action_line(self):
        """Test the flat baseline answer format."""
        assert parse_action_line("ACTION: open fridge") == (
            DecomposerOutput.subgoal("open fridge")
        )
        assert parse_action_line("DONE").end_of_siblings
        with pytest.raises(GrammarError):
            parse_action_line("SUBGOAL: open fridge")

    @pytest.mark.parametrize(
        "raw,expected", [("YES", True), (" no\n", False), ("Yes", True)]
    )
    def test_verdict(self, raw, expected):
        """Test verdict tokens."""
        assert parse_verdict(raw) is expected

    @pytest.mark.parametrize("raw", ["", "maybe", "YES."])
    def test_verdict_grammar_error(self, raw):
        """Test anything but YES or NO."""
        with pytest.raises(GrammarError):
            parse_verdict(raw)


class TestCompletionClient:
    """Test CompletionClient."""

    def test_live(self, logger, opener):
        """Test a live completion posts the prompt."""
        MockHTTPHandler.requests.clear()
        opener(MockHTTPHandler)
        client = CompletionClient(logger, "test", SETTINGS)
        assert client.complete(BUNDLE) == "SUBGOAL: grasp mug"
        request = MockHTTPHandler.requests[0]
        assert request.get_full_url() == f"{TEST_URL}/chat/completions"
        assert request.get_header("Authorization") == "Bearer secret"
        body = json.loads(request.data.decode("utf-8"))
        assert body["model"] == "test-model"
        assert [message["role"] for message in body["messages"]] == [
            "system",
            "user",
        ]
        assert body["messages"][1]["content"] == BUNDLE.user_text

    @pytest.mark.parametrize(
        "handler,kind",
        [
            (MockHTTPHandlerHTTPError, HTTP_STATUS),
            (MockHTTPHandlerURLError, TIMEOUT),
            (MockHTTPHandlerMalformed, HTTP_STATUS),
            (MockHTTPHandlerNotJSON, HTTP_STATUS),
            (MockHTTPHandlerNotUTF8, HTTP_STATUS),
        ],
    )
    def test_transport_errors(self, logger, opener, handler, kind):
        """Test transport failures are reported by kind."""
        opener(handler)
        client = CompletionClient(logger, "test", SETTINGS)
        with pytest.raises(TransportError) as error:
            client.complete(BUNDLE)
        assert error.value.kind == kind

    def test_http_status_code(self, logger, opener):
        """Test HTTP errors keep their status code."""
        opener(MockHTTPHandlerHTTPError)
        client = CompletionClient(logger, "test", SETTINGS)
        with pytest.raises(TransportError) as error:
            client.complete(BUNDLE)
        assert error.value.code == 503

    def test_not_configured(self, logger):
        """Test a live request needs an endpoint."""
        client = CompletionClient(logger, "test", LLMSettings())
        with pytest.raises(TransportError) as error:
            client.complete(BUNDLE)
        assert error.value.kind == HTTP_STATUS

    def test_record_then_replay(self, logger, opener, tmp_path):
        """Test recorded answers replay without the network."""
        path = str(tmp_path / "cassette.json")
        opener(MockHTTPHandler)
        recorder = CompletionClient(
            logger, "test", SETTINGS, TransportMode.RECORD, Cassette(path)
        )
        assert recorder.complete(BUNDLE) == "SUBGOAL: grasp mug"

        cassette = Cassette(path)
        assert len(cassette) == 1
        with open(path, encoding="utf-8") as file_handle:
            entry = json.load(file_handle)[BUNDLE.digest("test-model", 0.0)]
        assert entry["response_text"] == "SUBGOAL: grasp mug"
        assert entry["request_digest"] == "SubgoalLine: Task: move mug onto table"
        recorded_at = parser.isoparse(entry["timestamp"])
        assert recorded_at.tzinfo is not None
        assert recorded_at.astimezone(tz.UTC) <= datetime.now(tz.UTC)

        opener(MockHTTPHandlerURLError)
        player = CompletionClient(
            logger, "test", SETTINGS, TransportMode.REPLAY, cassette
        )
        assert player.complete(BUNDLE) == "SUBGOAL: grasp mug"
        with pytest.raises(TransportError) as error:
            player.complete(BUNDLE.with_reminder())
        assert error.value.kind == CASSETTE_MISS

    def test_cassette_required(self, logger):
        """Test record and replay need a cassette."""
        for mode in (TransportMode.RECORD, TransportMode.REPLAY):
            with pytest.raises(ValueError):
                CompletionClient(logger, "test", SETTINGS, mode)

    @pytest.mark.parametrize(
        "content",
        ["{not json", "[]", '{"key": {"response_text": "DONE"}}'],
    )
    def test_cassette_malformed(self, content, tmp_path):
        """Test unreadable cassettes are refused with their path."""
        path = tmp_path / "bad.json"
        path.write_text(content)
        with pytest.raises(CassetteFileError) as error:
            Cassette(str(path))
        assert str(path) in str(error.value)


class TestPolicyLLM:
    """Test PolicyLLM against a stub client."""

    @staticmethod
    def policy(*answers, retries=2):
        """Return a PolicyLLM answering from answers."""
        return DecompositionPolicy.get_instance("llm", StubClient(*answers), retries)

    def test_subgoal(self, ctx):
        """Test a well formed answer becomes a subgoal."""
        policy = self.policy("SUBGOAL: grasp mug")
        output = policy.next_subgoal(ctx)
        assert output == DecomposerOutput.subgoal("grasp mug")
        bundle = policy.client.bundles[0]
        assert bundle.expected_form is ExpectedForm.SUBGOAL_LINE
        assert bundle.user_text.startswith(
            "Task: move mug onto table\nCompleted steps:\n- none\nObservation:"
        )

    def test_done(self, ctx):
        """Test DONE ends the level."""
        assert self.policy("DONE").next_subgoal(ctx).end_of_siblings

    def test_retry_with_reminder(self, ctx):
        """Test an unparseable answer is asked again with a reminder."""
        policy = self.policy("Let me think.", "SUBGOAL: grasp mug")
        output = policy.next_subgoal(ctx)
        assert output.text == "grasp mug"
        assert output.retries == 1
        assert policy.client.bundles[1].user_text.endswith(FORMAT_REMINDER)

    def test_grammar_error(self, ctx):
        """Test the retries are bounded."""
        policy = self.policy("a", "b", "c", "d")
        with pytest.raises(GrammarError) as error:
            policy.next_subgoal(ctx)
        assert error.value.retries == 2
        assert error.value.raw == "c"
        assert len(policy.client.bundles) == 3

    def test_flat_mode(self, ctx):
        """Test the flat baseline asks for actions."""
        flat = replace(ctx, mode=ContextMode.FLAT_BASELINE)
        policy = self.policy("ACTION: grasp mug")
        assert policy.next_subgoal(flat).text == "grasp mug"
        assert policy.client.bundles[0].expected_form is ExpectedForm.ACTION_LINE

    def test_backend_unavailable(self, ctx):
        """Test transport failures surface as BackendUnavailable."""
        policy = self.policy(TransportError(TIMEOUT, "timed out"))
        with pytest.raises(BackendUnavailable) as error:
            policy.next_subgoal(ctx)
        assert error.value.kind == TIMEOUT

    @pytest.mark.parametrize("answer,expected", [("YES", True), ("NO", False)])
    def test_is_congruent(self, kitchen, answer, expected):
        """Test the congruence question and its answer."""
        policy = self.policy(answer)
        assert (
            policy.is_congruent(
                "grasp mug", "move mug onto table", None, kitchen, None
            )
            is expected
        )
        bundle = policy.client.bundles[0]
        assert bundle.expected_form is ExpectedForm.VERDICT_TOKEN
        assert "Proposed subgoal: grasp mug" in bundle.user_text
        assert "Previous step: none" in bundle.user_text

    def test_judge_congruence_retries(self, kitchen):
        """Test the verdict reports the retries it needed."""
        policy = self.policy("Sure, yes!", "YES")
        assert policy.judge_congruence(
            "grasp mug", "move mug onto table", None, kitchen, None
        ) == (True, 1)
        assert policy.client.bundles[1].user_text.endswith(FORMAT_REMINDER)


class TestLLMEpisode:
    """Test episodes planned by PolicyLLM."""

    @pytest.mark.parametrize("task_id", ["ss05_open_fridge"])
    def test_verdict_retries_in_trace(self, task):
        """Test verdict retries are written to the Verdict events."""
        policy = TestPolicyLLM.policy(
            "SUBGOAL: walk to fridge",
            "Sure, yes!",
            "YES",
            "SUBGOAL: open fridge",
            "YES",
            "DONE",
        )
        trace = run_episode(task, policy)
        assert trace.outcome.success
        verdicts = trace.of_kind(EV_VERDICT)
        assert [event.data["retries"] for event in verdicts] == [1, 0]

    @pytest.mark.parametrize("task_id", ["ss05_open_fridge"])
    def test_verdict_grammar_error(self, task):
        """Test an unparseable verdict is traced before the episode ends."""
        policy = TestPolicyLLM.policy(
            "SUBGOAL: walk to fridge", "maybe", "perhaps", "who knows"
        )
        trace = run_episode(task, policy)
        assert trace.outcome.kind is FailureKind.POLICY_GRAMMAR_ERROR
        [verdict] = trace.of_kind(EV_VERDICT)
        assert verdict.data["error"] == "who knows"
        assert verdict.data["retries"] == 2
        assert verdict.data["text"] == "walk to fridge"

    @pytest.mark.parametrize("task_id", ["ss05_open_fridge"])
    def test_payload_not_json(self, task, logger, opener):
        """Test an HTML answer surfaces as BackendUnavailable."""
        opener(MockHTTPHandlerNotJSON)
        client = CompletionClient(logger, "test", SETTINGS)
        policy = DecompositionPolicy.get_instance("llm", client)
        with pytest.raises(BackendUnavailable) as error:
            run_episode(task, policy)
        assert error.value.kind == HTTP_STATUS
