#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from pathlib import Path

from peewee import DatabaseProxy, DatabaseError, OperationalError, SqliteDatabase

from .models import Checkpoint, MetricRow, DBConfig

log = logging.getLogger(__name__)


###############################################################################
# Database initialization
# https://docs.peewee-orm.com/en/latest/peewee/database.html#dynamically-defining-a-database
# https://docs.peewee-orm.com/en/latest/peewee/database.html#setting-the-database-at-run-time
###############################################################################
class Database():
    DB = DatabaseProxy()
    MODELS = [Checkpoint, MetricRow, DBConfig]
    SCHEMA_VERSION = 1
    FILENAME = 'registry.db'

    def __init__(self, cache_dir):
        """ Open the SQLite registry stored in the cache directory """
        self.path = Path(cache_dir) / self.FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        log.info('Opening registry database: %s', self.path)

        # https://docs.peewee-orm.com/en/latest/peewee/database.html#using-sqlite
        database = SqliteDatabase(str(self.path), pragmas={
            'journal_mode': 'wal',
            'foreign_keys': 1})

        # Initialize DatabaseProxy
        self.DB.initialize(database)

        # Bind models to this database
        self.DB.bind(self.MODELS)

        try:
            self.DB.connect(reuse_if_open=True)
            self.verify_database_schema()
        except OperationalError as e:
            log.error('Unable to open registry database: %s', e)
            raise
        except DatabaseError as e:
            log.exception('Failed to initalize database: %s', e)
            raise

    #  https://docs.peewee-orm.com/en/latest/peewee/api.html#Database.create_tables
    def create_tables(self):
        """ Create tables in the database (skips existing) """
        table_names = ', '.join([m.__name__ for m in self.MODELS])
        log.info('Creating database tables: %s', table_names)
        self.DB.create_tables(self.MODELS, safe=True)  # safe adds if not exists
        # Create schema version key
        DBConfig.insert_schema_version(self.SCHEMA_VERSION)
        log.info('Database schema created.')

    def verify_database_schema(self):
        """ Verify if database is properly initialized """
        if not DBConfig.table_exists():
            self.create_tables()
            return

        db_ver = DBConfig.get_schema_version()
        if db_ver > self.SCHEMA_VERSION:
            raise RuntimeError(
                f'Unsupported schema version: {db_ver} '
                f'(code requires: {self.SCHEMA_VERSION})')
        if db_ver < self.SCHEMA_VERSION:
            DBConfig.update_schema_version(self.SCHEMA_VERSION)

    def close(self):
        if not self.DB.is_closed():
            self.DB.close()
