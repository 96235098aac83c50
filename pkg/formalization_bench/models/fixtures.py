import json
import os
import tempfile
import threading

from configs import settings
from utils import canonical_json, stable_hash
from . import exceptions


__all__ = ['FixtureStore']


class FixtureStore(object):
    """
    Content-addressed responses: <directory>/<namespace>/<sha256>.json

    The key is `stable_hash(request)`, so any change to the request
    (history, tool specs, model id, tool arguments) is a miss.
    """

    def __init__(self, directory: str, *, namespace: str = ''):
        self.directory = os.path.join(directory, namespace) \
            if namespace else directory
        self._lock = threading.Lock()

    @staticmethod
    def key_for(request) -> str:
        return stable_hash(request)

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, key + '.json')

    def __contains__(self, request) -> bool:
        return os.path.exists(self._path(self.key_for(request)))

    def lookup(self, request):
        """
        :raise:
            exceptions.FixtureMissError: no response stored for `request`
        :return:
            response: the stored JSON value
        """
        key = self.key_for(request)
        try:
            with open(self._path(key), 'r', encoding='utf-8') as f:
                return json.load(f)['response']
        except FileNotFoundError:
            settings.logger.warning(f"Fixture miss {key} in {self.directory}")
            raise exceptions.FixtureMissError(
                f"no fixture for request hash {key} in {self.directory}",
                key=key, cause='fixture'
            ) from None

    def record(self, request, response) -> str:
        key = self.key_for(request)
        with self._lock:
            os.makedirs(self.directory, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix='.tmp')
            try:
                with os.fdopen(fd, 'w', encoding='utf-8') as f:
                    f.write(canonical_json(
                        {'request': request, 'response': response}
                    ))
                os.replace(tmp, self._path(key))
            finally:
                if os.path.exists(tmp):
                    os.remove(tmp)
        return key

    def __len__(self):
        if not os.path.isdir(self.directory):
            return 0
        return sum(x.endswith('.json') for x in os.listdir(self.directory))
