from abc import ABC, abstractmethod
import json
import logging
from typing import Any

from . import storage

logger = logging.getLogger(__name__)


class BaseLabResource(ABC):
    """
    A directory plus an index file of JSON metadata.

    Subclasses choose the directory and the default index contents. Index
    writes are whole-file rewrites with sorted keys, so two resources with the
    same metadata have byte-identical index files.
    """

    INDEX_FILE = "index.json"

    def __init__(self, id):
        self.id = id

    @abstractmethod
    def get_dir(self) -> str:
        """Directory owned by this resource."""

    @classmethod
    def create(cls, id, *args, **kwargs):
        """Create the directory and a default index; an existing index is an error."""
        resource = cls(id, *args, **kwargs)
        resource._initialize()
        return resource

    @classmethod
    def get(cls, id, *args, **kwargs):
        """
        Open a resource whose directory already exists. A directory without an
        index gets the default one back.
        """
        resource = cls(id, *args, **kwargs)
        if not storage.isdir(resource.get_dir()):
            raise FileNotFoundError(f"{cls.__name__} '{id}' not found under {resource.get_dir()}")
        if not storage.exists(resource._get_json_file()):
            logger.debug("%s '%s' had no index, writing defaults", cls.__name__, id)
            resource._set_json_data(resource._default_json())
        return resource

    def _initialize(self, exist_ok: bool = False) -> None:
        storage.makedirs(self.get_dir(), exist_ok=True)
        if storage.exists(self._get_json_file()) and not exist_ok:
            raise FileExistsError(f"{type(self).__name__} '{self.id}' already exists")
        self._set_json_data(self._default_json())
        logger.debug("initialized %s '%s' at %s", type(self).__name__, self.id, self.get_dir())

    def _default_json(self) -> dict:
        return {"id": self.id}

    def _get_json_file(self) -> str:
        return storage.join(self.get_dir(), self.INDEX_FILE)

    def get_json_data(self) -> dict:
        """Index contents, or {} when the index is missing or unreadable."""
        try:
            data = json.loads(storage.read_text(self._get_json_file()))
        except (FileNotFoundError, json.JSONDecodeError):
            return {}
        return data if isinstance(data, dict) else {}

    def _set_json_data(self, json_data: dict) -> None:
        if not isinstance(json_data, dict):
            raise TypeError(f"index data must be a dict, got {type(json_data).__name__}")
        text = json.dumps(json_data, ensure_ascii=False, indent=2, sort_keys=True)
        storage.write_text(self._get_json_file(), text)

    def _get_json_data_field(self, key: str, default: Any = "") -> Any:
        return self.get_json_data().get(key, default)

    def _update_json_data(self, **fields: Any) -> dict:
        """Merge top-level fields into the index in one read-modify-write."""
        data = self.get_json_data()
        data.update(fields)
        self._set_json_data(data)
        return data

    def _update_json_data_field(self, key: str, value: Any) -> None:
        self._update_json_data(**{key: value})
