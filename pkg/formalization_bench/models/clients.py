import os
from typing import Optional

import requests
from bs4 import BeautifulSoup as bs

from configs import settings
from utils import get_json_config
from utils.decorators import retry
from . import exceptions


__all__ = ['HttpClient', 'DrafterClient', 'SearchClient', 'get_credential']


def get_credential(env_var: str, *, required: bool = True) -> Optional[str]:
    """
    Read a credential from the environment

    :raise:
        exceptions.ToolchainConfigurationError: unset and `required`
    """
    value = os.environ.get(env_var)
    if not value and required:
        raise exceptions.ToolchainConfigurationError(
            f"environment variable {env_var} is not set", cause='credential'
        )
    return value


class HttpClient(object):
    """
    A JSON-over-HTTP client with bounded retries on transient failures

    :attributes:
        url(str): endpoint
        timeout(int): seconds per request
        session(requests.Session | None)=None: injectable for tests
    """
    TRANSIENT_STATUS = {429, 500, 502, 503, 504}

    def __init__(
            self, url: str, *, timeout: int = 30,
            session: Optional[requests.Session] = None,
            headers: Optional[dict] = None
            ):
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()
        self.headers = headers or {}

    def get_response(self, method: str, **kwargs) -> requests.Response:
        """
        Send the request, retrying connection errors and transient statuses

        :raise:
            requests.RequestException: after HTTP_RETRY_CAP attempts
        :return:
            response(requests.Response): a non-transient response
        """
        @retry(
            settings.HTTP_RETRY_CAP,
            on=(requests.ConnectionError, requests.Timeout, _TransientStatus),
            backoff=1.0, logger=settings.logger
        )
        def send():
            response = self.session.request(
                method, self.url, headers=self.headers,
                timeout=self.timeout, **kwargs
            )
            if response.status_code in self.TRANSIENT_STATUS:
                raise _TransientStatus(
                    f"transient status {response.status_code}",
                    response=response
                )
            return response
        try:
            return send()
        except _TransientStatus as e:
            return e.response


class _TransientStatus(requests.RequestException):
    pass


class DrafterClient(HttpClient):
    """
    Expert drafter endpoint: POST {requestField: statement}
    and read the draft from `responseField`
    """

    def __init__(self, config: Optional[dict] = None, **kwargs):
        config = config or get_json_config()['drafter']
        token = get_credential(config['credential'], required=False)
        super().__init__(
            config['url'], timeout=config.get('timeout', 120),
            headers={'Authorization': f"Bearer {token}"} if token else None,
            **kwargs
        )
        self.request_field = config.get('requestField', 'statement')
        self.response_field = config.get('responseField', 'translation')

    def translate(self, statement: str) -> str:
        """
        :raise:
            requests.RequestException: endpoint unreachable or non-2xx
            exceptions.DecodeError: response lacks the draft field
        """
        response = self.get_response(
            'POST', json={self.request_field: statement}
        )
        response.raise_for_status()
        try:
            draft = response.json()[self.response_field]
        except (ValueError, KeyError, TypeError):
            raise exceptions.DecodeError(
                "drafter response has no draft field",
                raw_body=response.text, cause='drafter'
            ) from None
        return draft


class SearchClient(HttpClient):
    """Web search provider returning (title, snippet, url) items"""

    def __init__(self, config: Optional[dict] = None, **kwargs):
        config = config or get_json_config()['search']
        super().__init__(
            config['url'], timeout=config.get('timeout', 30), **kwargs
        )
        self.credential = config['credential']
        self.engine_id = config.get('engineId', '')
        self.max_results = config.get('maxResults', 5)

    @staticmethod
    def clean_snippet(snippet: Optional[str]) -> str:
        return ' '.join(
            bs(snippet or '', 'html.parser').get_text(' ').split()
        )

    def search(self, query: str) -> list:
        """
        :raise:
            exceptions.ToolArgumentError: empty query
            requests.RequestException: provider error
        :return:
            results(list[dict]): title, snippet, url
        """
        if not query or not query.strip():
            raise exceptions.ToolArgumentError("empty query", cause='query')
        response = self.get_response('GET', params={
            'key': get_credential(self.credential), 'cx': self.engine_id,
            'q': query, 'num': self.max_results
        })
        response.raise_for_status()
        items = response.json().get('items', [])
        return [
            {
                'title': self.clean_snippet(item.get('title')),
                'snippet': self.clean_snippet(
                    item.get('htmlSnippet') or item.get('snippet')
                ),
                'url': item.get('link', '')
            }
            for item in items[:self.max_results]
        ]
