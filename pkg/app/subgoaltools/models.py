#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from peewee import (
    IntegrityError, OperationalError, Model, AutoField, DateTimeField, CharField,
    FloatField, IntegerField, SmallIntegerField)

from datetime import datetime
from enum import IntEnum

log = logging.getLogger(__name__)


class ComponentKind(IntEnum):
    DATASET = 0
    CLASSIFIER = 1
    POLICY = 2
    IDM = 3


###############################################################################
# Custom field types
# https://docs.peewee-orm.com/en/latest/peewee/models.html#field-types-table
###############################################################################

# https://github.com/coleifer/peewee/issues/630
class IntEnumField(SmallIntegerField):
    """ Integer representation field for Enum """

    def __init__(self, choices, *args, **kwargs):
        super(SmallIntegerField, self).__init__(*args, **kwargs)
        self.choices = choices

    def db_value(self, value):
        return value.value

    def python_value(self, value):
        return self.choices(value)


###############################################################################
# Database models
# https://docs.peewee-orm.com/en/latest/peewee/models.html#model-options-and-table-metadata
# Note: field attribute "default" is implemented purely in Python.
###############################################################################
class BaseModel(Model):
    @classmethod
    def database(cls):
        return cls._meta.database


class Checkpoint(BaseModel):
    """ Registry of cached trained components and generated datasets """
    id = AutoField()
    name = CharField(unique=True, max_length=128)
    kind = IntEnumField(ComponentKind, index=True)
    config_hash = CharField(max_length=64)
    path = CharField(max_length=512)
    train_steps = IntegerField(default=0)
    final_metric = FloatField(null=True)
    created = DateTimeField(default=datetime.utcnow)
    modified = DateTimeField(default=datetime.utcnow)

    @staticmethod
    def lookup(name):
        return Checkpoint.get_or_none(Checkpoint.name == name)

    @staticmethod
    def register(name, kind, config_hash, path, train_steps=0, final_metric=None):
        """
        Insert or refresh the registry entry for a component.

        Args:
            name (str): unique component name, e.g. "classifier-desynchronized-s0"
            kind (ComponentKind): component type
            config_hash (str): hash of the configuration it was built from
            path (str): artifact location on disk

        Returns:
            Checkpoint: the stored row
        """
        with Checkpoint.database().atomic():
            row = Checkpoint.lookup(name)
            if row is None:
                row = Checkpoint(name=name, kind=kind)
            row.kind = kind
            row.config_hash = config_hash
            row.path = str(path)
            row.train_steps = train_steps
            row.final_metric = final_metric
            row.modified = datetime.utcnow()
            row.save()
        return row


class MetricRow(BaseModel):
    """ One ablation cell/K/seed result """
    id = AutoField()
    run_id = CharField(index=True, max_length=32)
    cell = CharField(max_length=32)
    k = IntegerField()
    seed = IntegerField()
    n1 = FloatField()
    n2 = FloatField()
    n3 = FloatField()
    n4 = FloatField()
    n5 = FloatField()
    avg_len = FloatField()
    off_task_rate = FloatField(null=True)
    wall_clock = FloatField(default=0.0)
    created = DateTimeField(default=datetime.utcnow)

    class Meta:
        table_name = 'metric_row'

    # https://docs.peewee-orm.com/en/latest/peewee/querying.html#inserting-rows-in-batches
    @staticmethod
    def bulk_insert(rows, batch_size=100):
        """
        Insert metric rows.

        Args:
            rows (list[dict]): field dictionaries

        Returns:
            int count: inserted row count
        """
        count = 0
        with MetricRow.database().atomic():
            for idx in range(0, len(rows), batch_size):
                batch = rows[idx:idx + batch_size]
                try:
                    if MetricRow.insert_many(batch).execute():
                        count += len(batch)
                except IntegrityError as e:
                    log.exception('Unable to insert metric rows: %s', e)
                except OperationalError as e:
                    log.exception('Failed to insert metric rows: %s', e)

        return count

    @staticmethod
    def latest_run_id():
        row = MetricRow.select(MetricRow.run_id).order_by(MetricRow.id.desc()).first()
        return None if row is None else row.run_id

    @staticmethod
    def for_run(run_id):
        return list(MetricRow.select()
                    .where(MetricRow.run_id == run_id)
                    .order_by(MetricRow.id))


class DBConfig(BaseModel):
    """ Database versioning model """
    key = CharField(null=False, max_length=64, unique=True)
    val = CharField(null=True, max_length=64)
    modified = DateTimeField(index=True, default=datetime.utcnow)

    class Meta:
        primary_key = False
        table_name = 'db_config'

    @staticmethod
    def get_schema_version() -> int:
        """ Get current schema version """
        db_ver = DBConfig.get(DBConfig.key == 'schema_version').val
        return int(db_ver)

    @staticmethod
    def insert_schema_version(schema_version):
        """ Insert current schema version """
        DBConfig.insert(
            key='schema_version',
            val=schema_version
        ).execute()

    @staticmethod
    def update_schema_version(schema_version):
        """ Update current schema version """
        with DBConfig.database().atomic():
            query = (DBConfig
                     .update(val=schema_version)
                     .where(DBConfig.key == 'schema_version'))
            query.execute()
